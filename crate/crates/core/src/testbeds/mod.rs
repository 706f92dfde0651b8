//! Synthetic simulation models, field-data generation and the simulator
//! interface used by the design loop.

mod external;

pub use external::{ExternalSim, ExternalSimSpec, PROTOCOL_HEADER};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::posterior::{FieldExperiment, NoiseModel};
use crate::space::{BoxScaling, JointInput, Prior};

/// A simulator evaluated on joint inputs scaled to the unit box.
pub trait Simulator: Send {
    fn q(&self) -> usize;
    fn p(&self) -> usize;
    fn evaluate(&mut self, z: &JointInput) -> Result<f64, SimError>;
}

pub fn eval_sine2d(x: f64, theta: f64) -> f64 {
    (10.0 * x - 5.0 * theta).sin()
}

pub fn eval_ranjan3d(x1: f64, x2: f64, theta: f64) -> f64 {
    (30.0 + 5.0 * x1 * (5.0 * x1).sin()) * (6.0 * theta + 1.0 + (-5.0 * x2).exp())
}

/// `√(Σ x) · (Σ θ)²`.
pub fn eval_highdim(x: &[f64], theta: &[f64]) -> f64 {
    let sx: f64 = x.iter().sum();
    let st: f64 = theta.iter().sum();
    sx.sqrt() * st * st
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Testbed {
    Sine2D,
    Ranjan3D,
    HighDim { q: usize, p: usize },
}

impl Testbed {
    pub fn q(&self) -> usize {
        match self {
            Testbed::Sine2D => 1,
            Testbed::Ranjan3D => 2,
            Testbed::HighDim { q, .. } => *q,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Testbed::Sine2D | Testbed::Ranjan3D => 1,
            Testbed::HighDim { p, .. } => *p,
        }
    }

    /// Evaluates in natural units.
    pub fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        match self {
            Testbed::Sine2D => eval_sine2d(x[0], theta[0]),
            Testbed::Ranjan3D => eval_ranjan3d(x[0], x[1], theta[0]),
            Testbed::HighDim { .. } => eval_highdim(x, theta),
        }
    }

    /// Natural-unit box of the joint input (design coordinates first).
    pub fn scaling(&self) -> BoxScaling {
        match self {
            Testbed::HighDim { q, p } => {
                let mut lo = vec![0.0; *q];
                let mut hi = vec![1.0; *q];
                lo.extend(std::iter::repeat(-5.0).take(*p));
                hi.extend(std::iter::repeat(5.0).take(*p));
                BoxScaling::new(lo, hi)
            }
            _ => BoxScaling::unit(self.q() + self.p()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Testbed::Sine2D => "sine2d".into(),
            Testbed::Ranjan3D => "ranjan3d".into(),
            Testbed::HighDim { q, p } => format!("highdim-{q}-{p}"),
        }
    }

    /// Parses `sine2d`, `ranjan3d` or `highdim-<q>-<p>`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sine2d" => Some(Testbed::Sine2D),
            "ranjan3d" => Some(Testbed::Ranjan3D),
            _ => {
                let rest = s.strip_prefix("highdim-")?;
                let (q, p) = rest.split_once('-')?;
                let (q, p) = (q.parse().ok()?, p.parse().ok()?);
                (q >= 1 && p >= 1).then_some(Testbed::HighDim { q, p })
            }
        }
    }
}

/// A synthetic calibration problem: simulator, true parameter, field design
/// and observation error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub testbed: Testbed,
    pub discrepancy: bool,
    pub noise_sd: f64,
    /// True parameter in natural units.
    pub theta_true: Vec<f64>,
    /// Distinct field design inputs in natural units.
    pub field_design: Vec<Vec<f64>>,
    pub replicates: usize,
}

impl SyntheticModel {
    pub fn sine2d(discrepancy: bool) -> Self {
        Self {
            testbed: Testbed::Sine2D,
            discrepancy,
            noise_sd: 0.2,
            theta_true: vec![std::f64::consts::PI / 5.0],
            field_design: [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|x| vec![*x]).collect(),
            replicates: 2,
        }
    }

    pub fn ranjan3d(discrepancy: bool) -> Self {
        let grid = [0.1, 0.5, 0.9];
        let field_design = grid.iter().flat_map(|a| grid.iter().map(move |b| vec![*a, *b])).collect();
        Self {
            testbed: Testbed::Ranjan3D,
            discrepancy,
            noise_sd: 0.5,
            theta_true: vec![0.5],
            field_design,
            replicates: 2,
        }
    }

    /// The 12-dimensional scenarios `(q, p) ∈ {(2,10), (6,6), (10,2)}`.
    pub fn highdim(q: usize, p: usize) -> Option<Self> {
        let variance: f64 = match (q, p) {
            (2, 10) => 25.0,
            (6, 6) => 5.0,
            (10, 2) => 1.0,
            _ => return None,
        };
        Some(Self {
            testbed: Testbed::HighDim { q, p },
            discrepancy: false,
            noise_sd: variance.sqrt(),
            theta_true: vec![0.0; p],
            field_design: vec![vec![0.5; q]; 4],
            replicates: 1,
        })
    }

    pub fn from_testbed(testbed: Testbed, discrepancy: bool) -> Option<Self> {
        match testbed {
            Testbed::Sine2D => Some(Self::sine2d(discrepancy)),
            Testbed::Ranjan3D => Some(Self::ranjan3d(discrepancy)),
            Testbed::HighDim { q, p } => {
                if discrepancy {
                    None
                } else {
                    Self::highdim(q, p)
                }
            }
        }
    }

    pub fn q(&self) -> usize {
        self.testbed.q()
    }

    pub fn p(&self) -> usize {
        self.testbed.p()
    }

    pub fn scaling(&self) -> BoxScaling {
        self.testbed.scaling()
    }

    /// Systematic model error `b(x)`, natural units.
    pub fn bias(&self, x: &[f64]) -> f64 {
        if !self.discrepancy {
            return 0.0;
        }
        match self.testbed {
            Testbed::Sine2D => 1.0 - x[0] / 3.0 - 2.0 * x[0] * x[0] / 3.0,
            Testbed::Ranjan3D => -50.0 * (-0.2 * x[0] - 0.1 * x[1]).exp(),
            Testbed::HighDim { .. } => 0.0,
        }
    }

    /// Noiseless field mean `η(x, θ_true) + b(x)` at a natural-unit input.
    pub fn field_mean(&self, x: &[f64]) -> f64 {
        self.testbed.eval(x, &self.theta_true) + self.bias(x)
    }

    /// Field mean at a design input scaled to the unit box.
    pub fn field_mean_unit(&self, x_unit: &[f64]) -> f64 {
        let (sx, _) = self.scaling().split(self.q());
        self.field_mean(&sx.from_unit(x_unit))
    }

    /// Simulator output at a scaled joint input.
    pub fn eval_unit(&self, z: &[f64]) -> f64 {
        let nat = self.scaling().from_unit(z);
        let q = self.q();
        self.testbed.eval(&nat[..q], &nat[q..])
    }

    pub fn theta_true_unit(&self) -> Vec<f64> {
        let (_, st) = self.scaling().split(self.q());
        st.to_unit(&self.theta_true)
    }

    pub fn simulator(&self) -> SyntheticSimulator {
        SyntheticSimulator { model: self.clone() }
    }
}

/// Observations `η(xᶠ, θ_true) + b(xᶠ) + ε` at every replicate of the field
/// design, returned with scaled inputs, known `σ²` and a uniform prior on the
/// scaled parameter box.
pub fn make_field_data<R: Rng + ?Sized>(model: &SyntheticModel, rng: &mut R) -> FieldExperiment {
    let normal = Normal::new(0.0, model.noise_sd).expect("noise sd must be finite and positive");
    let (sx, _) = model.scaling().split(model.q());
    let mut xs = Vec::new();
    let mut y = Vec::new();
    for x in &model.field_design {
        for _ in 0..model.replicates {
            xs.push(sx.to_unit(x));
            y.push(model.field_mean(x) + normal.sample(rng));
        }
    }
    let noise = NoiseModel::Known { variance: model.noise_sd * model.noise_sd };
    FieldExperiment::new(xs, y, noise, Prior::unit(model.p())).expect("synthetic field data is well formed")
}

/// In-process evaluator for a synthetic model.
#[derive(Clone, Debug)]
pub struct SyntheticSimulator {
    model: SyntheticModel,
}

impl Simulator for SyntheticSimulator {
    fn q(&self) -> usize {
        self.model.q()
    }

    fn p(&self) -> usize {
        self.model.p()
    }

    fn evaluate(&mut self, z: &JointInput) -> Result<f64, SimError> {
        if z.q() != self.q() || z.p() != self.p() {
            return Err(SimError::InvalidInput(format!(
                "expected q={} p={}, got q={} p={}",
                self.q(),
                self.p(),
                z.q(),
                z.p()
            )));
        }
        Ok(self.model.eval_unit(z.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn sine_values() {
        assert!((eval_sine2d(0.5, 0.0) - 5f64.sin()).abs() < 1e-15);
        assert!((eval_sine2d(0.5, 0.0) + 0.958924).abs() < 1e-6);
        assert_eq!(eval_sine2d(0.0, 0.0), 0.0);
        assert!((eval_sine2d(0.1, std::f64::consts::PI / 5.0) + 0.841471).abs() < 1e-6);
    }

    #[test]
    fn ranjan_values() {
        assert_eq!(eval_ranjan3d(0.0, 0.0, 0.0), 60.0);
        let v = (30.0 + 2.5 * 2.5f64.sin()) * (4.0 + (-2.5f64).exp());
        assert!((eval_ranjan3d(0.5, 0.5, 0.5) - v).abs() < 1e-12);
        // Direct evaluation gives 128.5701; the commonly quoted 128.573 is a rounding.
        assert!((eval_ranjan3d(0.5, 0.5, 0.5) - 128.573).abs() < 5e-3);
        assert!((eval_ranjan3d(0.0, 1.0, 0.0) - 30.202).abs() < 1e-3);
    }

    #[test]
    fn highdim_values() {
        assert_eq!(eval_highdim(&[0.3, 0.9], &[0.0; 10]), 0.0);
        let mut t = vec![0.0; 10];
        t[0] = 0.25;
        t[3] = 0.75;
        assert!((eval_highdim(&[1.0, 1.0], &t) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(eval_highdim(&[0.0, 0.0], &[1.0; 10]), 0.0);
    }

    #[test]
    fn ranjan_discrepancy_at_origin() {
        let mut m = SyntheticModel::ranjan3d(true);
        m.theta_true = vec![0.0];
        assert!((m.field_mean(&[0.0, 0.0]) - 10.0).abs() < 1e-12);
        m.theta_true = vec![0.5];
        assert!((m.field_mean(&[0.0, 0.0]) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn sine_field_data_shape() {
        let m = SyntheticModel::sine2d(false);
        let fe = make_field_data(&m, &mut rng_from(5));
        assert_eq!(fe.d(), 10);
        assert_eq!(fe.unique_x().len(), 5);
        assert!((m.field_mean(&[0.1]) + 0.8415).abs() < 1e-4);
    }

    #[test]
    fn tiny_noise_reproduces_the_mean() {
        let mut m = SyntheticModel::ranjan3d(true);
        m.noise_sd = 1e-9;
        let fe = make_field_data(&m, &mut rng_from(9));
        for (x, y) in fe.field_x().iter().zip(fe.y().iter()) {
            assert!((y - m.field_mean(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn field_data_is_reproducible() {
        let m = SyntheticModel::sine2d(true);
        let a = make_field_data(&m, &mut rng_from(11));
        let b = make_field_data(&m, &mut rng_from(11));
        assert_eq!(a.y(), b.y());
    }

    #[test]
    fn testbed_names_round_trip() {
        for t in [Testbed::Sine2D, Testbed::Ranjan3D, Testbed::HighDim { q: 6, p: 6 }] {
            assert_eq!(Testbed::parse(&t.name()), Some(t));
        }
        assert_eq!(Testbed::parse("highdim-0-3"), None);
        assert_eq!(Testbed::parse("nope"), None);
    }

    #[test]
    fn highdim_scaling_maps_back_to_natural_units() {
        let m = SyntheticModel::highdim(6, 6).unwrap();
        let nat: Vec<f64> = (0..12).map(|i| if i < 6 { 0.1 * i as f64 } else { -4.0 + i as f64 * 0.3 }).collect();
        let unit = m.scaling().to_unit(&nat);
        let direct = eval_highdim(&nat[..6], &nat[6..]);
        assert!((m.eval_unit(&unit) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        assert_eq!(m.theta_true_unit(), vec![0.5; 6]);
    }
}
