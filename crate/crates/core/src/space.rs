//! Input-space types: joint simulator inputs, box scaling and the prior.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A simulator input `z = (x, θ)`: `q` design coordinates followed by `p`
/// parameter coordinates, all scaled to the unit box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointInput {
    z: Vec<f64>,
    q: usize,
}

impl JointInput {
    pub fn new(design: &[f64], params: &[f64]) -> Self {
        let mut z = Vec::with_capacity(design.len() + params.len());
        z.extend_from_slice(design);
        z.extend_from_slice(params);
        Self { z, q: design.len() }
    }

    pub fn from_concat(z: Vec<f64>, q: usize) -> Self {
        assert!(q <= z.len());
        Self { z, q }
    }

    pub fn design(&self) -> &[f64] {
        &self.z[..self.q]
    }

    pub fn params(&self) -> &[f64] {
        &self.z[self.q..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.z.len() - self.q
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn in_unit_box(&self) -> bool {
        self.z.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Affine map between natural units and the unit box, per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxScaling {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxScaling {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| u > l), "empty box");
        Self { lower, upper }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn to_unit(&self, natural: &[f64]) -> Vec<f64> {
        natural
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l) / (u - l))
            .collect()
    }

    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| l + v * (u - l))
            .collect()
    }

    /// Splits into design and parameter parts (first `q` coordinates are design).
    pub fn split(&self, q: usize) -> (BoxScaling, BoxScaling) {
        (
            BoxScaling::new(self.lower[..q].to_vec(), self.upper[..q].to_vec()),
            BoxScaling::new(self.lower[q..].to_vec(), self.upper[q..].to_vec()),
        )
    }
}

/// Uniform prior over a box in scaled parameter coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    lower: Vec<f64>,
    upper: Vec<f64>,
    log_volume: f64,
}

impl Prior {
    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        let log_volume = lower.iter().zip(&upper).map(|(l, u)| (u - l).ln()).sum();
        Self { lower, upper, log_volume }
    }

    /// Uniform on `[0,1]^p`, density 1.
    pub fn unit(p: usize) -> Self {
        Self::uniform(vec![0.0; p], vec![1.0; p])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Maps a point of `[0,1]^p` affinely onto the prior box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lower.iter().zip(&self.upper)).map(|(t, (l, h))| l + t * (h - l)).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *t >= *l && *t <= *u)
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            (-self.log_volume).exp()
        } else {
            0.0
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + rng.gen::<f64>() * (u - l))
            .collect()
    }
}
