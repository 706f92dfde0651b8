use proptest::prelude::*;

use seqcal::acquisition::{lhs_sample, select};
use seqcal::gp::{matern15, Emulator, KernelParams, SimDataset, Standardization};
use seqcal::metrics::{interval_score, interval_score_bounds, quantile};
use seqcal::posterior::{posterior_moments, FieldExperiment, NoiseModel};
use seqcal::rng::rng_from;
use seqcal::space::{BoxScaling, JointInput, Prior};

fn unit_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, len)
}

fn kernel(dim: usize) -> impl Strategy<Value = KernelParams> {
    (prop::collection::vec(-4.0..6.0f64, dim), 1e-3..1e3f64, 1e-8..1.0f64)
        .prop_map(|(zeta, tau2, nugget)| KernelParams::new(zeta, tau2, nugget))
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_bounded_by_tau2(a in unit_vec(3), b in unit_vec(3), k in kernel(3)) {
        let za = JointInput::from_concat(a, 2);
        let zb = JointInput::from_concat(b, 2);
        let kab = matern15(&za, &zb, &k).unwrap();
        let kba = matern15(&zb, &za, &k).unwrap();
        prop_assert_eq!(kab, kba);
        prop_assert!(kab > 0.0);
        prop_assert!(kab <= k.tau2() * (1.0 + 1e-12));
        prop_assert!((matern15(&za, &za, &k).unwrap() - k.tau2()).abs() <= 1e-12 * k.tau2());
    }

    #[test]
    fn interval_score_is_at_least_the_width(l in -10.0..10.0f64, w in 0.0..10.0f64, a in -30.0..30.0f64, alpha in 0.01..0.5f64) {
        let u = l + w;
        let s = interval_score_bounds(l, u, alpha, a);
        prop_assert!(s >= w - 1e-12);
        let covered = (l..=u).contains(&a);
        prop_assert_eq!((s - w).abs() <= 1e-12, covered);
    }

    #[test]
    fn interval_score_is_translation_equivariant(values in prop::collection::vec(-5.0..5.0f64, 2..60), a in -8.0..8.0f64, c in -100.0..100.0f64) {
        let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
        let s0 = interval_score(&values, 0.1, a);
        let s1 = interval_score(&shifted, 0.1, a + c);
        prop_assert!((s0 - s1).abs() <= 1e-9 * (1.0 + s0.abs()));
    }

    #[test]
    fn quantiles_are_monotone_and_within_range(values in prop::collection::vec(-5.0..5.0f64, 1..40), p1 in 0.0..=1.0f64, p2 in 0.0..=1.0f64) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let (qlo, qhi) = (quantile(&values, lo), quantile(&values, hi));
        prop_assert!(qlo <= qhi);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(qlo >= min && qhi <= max);
        prop_assert_eq!(quantile(&values, 0.0), min);
        prop_assert_eq!(quantile(&values, 1.0), max);
    }

    #[test]
    fn scaling_round_trips(lower in prop::collection::vec(-100.0..100.0f64, 4), span in prop::collection::vec(1e-3..50.0f64, 4), u in unit_vec(4)) {
        let upper: Vec<f64> = lower.iter().zip(&span).map(|(l, s)| l + s).collect();
        let s = BoxScaling::new(lower.clone(), upper.clone());
        let nat = s.from_unit(&u);
        for ((v, l), h) in nat.iter().zip(&lower).zip(&upper) {
            prop_assert!(*v >= l - 1e-9 && *v <= h + 1e-9);
        }
        for (a, b) in s.to_unit(&nat).iter().zip(&u) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn lhs_puts_one_point_in_every_stratum(n in 1usize..40, dims in 1usize..6, seed in any::<u64>()) {
        let pts = lhs_sample(n, dims, &mut rng_from(seed));
        prop_assert_eq!(pts.len(), n);
        for j in 0..dims {
            let mut strata: Vec<usize> = pts.iter().map(|p| ((p[j] * n as f64).floor() as usize).min(n - 1)).collect();
            strata.sort_unstable();
            prop_assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn select_picks_the_first_maximum_and_skips_nan(scores in prop::collection::vec(prop_oneof![Just(f64::NAN), -3.0..3.0f64, Just(1.0)], 1..50)) {
        let finite: Vec<(usize, f64)> = scores.iter().copied().enumerate().filter(|(_, s)| !s.is_nan()).collect();
        match select(&scores) {
            Ok(i) => {
                let best = finite.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
                let first = finite.iter().find(|(_, s)| *s == best).unwrap().0;
                prop_assert_eq!(i, first);
            }
            Err(_) => prop_assert!(finite.is_empty()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictive_and_posterior_variances_are_nonnegative(
        pts in prop::collection::vec(unit_vec(2), 3..12),
        k in kernel(2),
        ys in prop::collection::vec(-2.0..2.0f64, 12),
        field in prop::collection::vec(0.0..=1.0f64, 1..5),
        theta in 0.0..=1.0f64,
        probe in unit_vec(2),
    ) {
        let records: Vec<(JointInput, f64)> = pts.iter().zip(&ys).map(|(p, y)| (JointInput::from_concat(p.clone(), 1), *y)).collect();
        let data = SimDataset::from_records(records).unwrap();
        let e = Emulator::with_params(&data, k, Standardization::IDENTITY).unwrap();
        let zp = JointInput::from_concat(probe, 1);
        let pred = e.predict(&zp).unwrap();
        prop_assert!(pred.var >= 0.0);
        let first = data.inputs()[0].clone();
        prop_assert!(e.fantasy_update_var(&zp, &first).unwrap() <= pred.var * (1.0 + 1e-9) + 1e-12);

        let field_x: Vec<Vec<f64>> = field.iter().map(|x| vec![*x]).collect();
        let y: Vec<f64> = field.iter().map(|x| (10.0 * x).sin()).collect();
        let fe = FieldExperiment::new(field_x.clone(), y, NoiseModel::Known { variance: 0.04 }, Prior::unit(1)).unwrap();
        let fm = e.predict_field(&[theta], &field_x).unwrap();
        let m = posterior_moments(&fm, &fe, &[theta]).unwrap();
        prop_assert!(m.mean >= 0.0);
        prop_assert!(m.var >= 0.0);
    }
}
