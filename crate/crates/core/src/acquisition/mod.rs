//! Candidate scoring and selection.
//!
//! Every criterion is normalized so that larger scores are better. The
//! expected-variance criteria cache everything that depends only on the
//! reference point (field moments, factorizations, whitened
//! cross-covariances) and score each candidate by the rank-1 forms of the
//! determinant and inverse of `Σ + S ± φ`.

mod design;
mod scorers;

pub use design::{build_candidates, lhs_sample, uniform_sample};
pub use scorers::{score_ap, score_ay, score_imspe, score_maxvar, ApScorer, AyScorer, ImspeScorer, MaxVarScorer};

use rayon::prelude::*;

use crate::error::AcquisitionError;
use crate::space::JointInput;

/// Candidates and reference sets for one iteration.
#[derive(Clone, Debug, Default)]
pub struct AcquisitionContext {
    pub candidates: Vec<JointInput>,
    pub theta_ref: Vec<Vec<f64>>,
    pub x_ref: Vec<Vec<f64>>,
    /// Joint reference inputs for IMSPE.
    pub z_ref: Vec<JointInput>,
    pub theta_hat: Option<Vec<f64>>,
}

/// A criterion prepared for one emulator state.
pub trait Scorer: Sync {
    fn score(&self, z_star: &JointInput) -> Result<f64, AcquisitionError>;
}

/// Scores every candidate in parallel; failures become NaN so that
/// [`select`] skips them.
pub fn score_all<S: Scorer + ?Sized>(scorer: &S, candidates: &[JointInput]) -> Vec<f64> {
    candidates
        .par_iter()
        .map(|z| match scorer.score(z) {
            Ok(v) => v,
            Err(err) => {
                log::debug!("candidate scoring failed: {err}");
                f64::NAN
            }
        })
        .collect()
}

/// Index of the largest non-NaN score; ties go to the lowest index.
pub fn select(scores: &[f64]) -> Result<usize, AcquisitionError> {
    if scores.is_empty() {
        return Err(AcquisitionError::EmptyCandidates);
    }
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.map_or(true, |b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(AcquisitionError::AcquisitionFailed(scores.len()))
}
