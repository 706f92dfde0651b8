//! Gaussian-process emulation over the joint input `z = (x, θ)`.
//!
//! Outputs are standardized (zero mean, unit sample variance) before fitting,
//! so kernel parameters live in standardized units. Everything the emulator
//! returns through its public API is in original output units.

mod emulator;
mod fit;

pub use emulator::{Emulator, FieldEmulatorMoments, Prediction};
pub use fit::{fit, log_marginal_likelihood, FitConfig, HyperBounds};

use serde::{Deserialize, Serialize};

use crate::error::GpError;
use crate::space::JointInput;

/// Kernel hyperparameters in standardized output units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// `ζ`, one per input coordinate; the inverse lengthscale is `e^ζ`.
    pub log_inv_lengthscales: Vec<f64>,
    /// `ln τ²`.
    pub log_tau2: f64,
    /// `υ`, added to the diagonal of the training covariance.
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(log_inv_lengthscales: Vec<f64>, tau2: f64, nugget: f64) -> Self {
        assert!(tau2 > 0.0 && nugget > 0.0);
        Self { log_inv_lengthscales, log_tau2: tau2.ln(), nugget }
    }

    pub fn dim(&self) -> usize {
        self.log_inv_lengthscales.len()
    }

    pub fn tau2(&self) -> f64 {
        self.log_tau2.exp()
    }

    pub fn inv_lengthscales(&self) -> Vec<f64> {
        self.log_inv_lengthscales.iter().map(|z| z.exp()).collect()
    }
}

/// Separable Matérn-1.5 covariance `τ² ∏ (1 + a|Δ|) e^{-a|Δ|}` with `a = e^ζ`.
pub fn matern15(z: &JointInput, z2: &JointInput, k: &KernelParams) -> Result<f64, GpError> {
    if z.dim() != k.dim() {
        return Err(GpError::DimensionMismatch { expected: k.dim(), got: z.dim() });
    }
    if z2.dim() != k.dim() {
        return Err(GpError::DimensionMismatch { expected: k.dim(), got: z2.dim() });
    }
    Ok(k.tau2() * correlation(z.as_slice(), z2.as_slice(), &k.inv_lengthscales()))
}

#[inline]
pub(crate) fn correlation(a: &[f64], b: &[f64], inv_ls: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut prod = 1.0;
    for ((x, y), l) in a.iter().zip(b).zip(inv_ls) {
        let ar = l * (x - y).abs();
        s += ar;
        prod *= 1.0 + ar;
    }
    prod * (-s).exp()
}

/// Affine output transform: `standardized = (y - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Self = Self { center: 0.0, scale: 1.0 };

    /// Mean and sample standard deviation; a zero spread keeps `scale = 1`.
    pub fn from_outputs(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let center = y.iter().sum::<f64>() / n;
        let ss = y.iter().map(|v| (v - center).powi(2)).sum::<f64>();
        let sd = if y.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
        let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        Self { center, scale }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.center + self.scale * y
    }
}

/// The growing simulation data set: joint inputs and scalar outputs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SimDataset {
    inputs: Vec<JointInput>,
    outputs: Vec<f64>,
}

impl SimDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<(JointInput, f64)>) -> Result<Self, GpError> {
        let mut d = Self::new();
        for (z, y) in records {
            d.push(z, y)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, z: JointInput, y: f64) -> Result<(), GpError> {
        if let Some(first) = self.inputs.first() {
            if first.dim() != z.dim() || first.q() != z.q() {
                return Err(GpError::DimensionMismatch { expected: first.dim(), got: z.dim() });
            }
        }
        if !y.is_finite() {
            return Err(GpError::NonFiniteOutput(self.outputs.len()));
        }
        self.inputs.push(z);
        self.outputs.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn inputs(&self) -> &[JointInput] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn dim(&self) -> Option<usize> {
        self.inputs.first().map(JointInput::dim)
    }

    pub fn q(&self) -> Option<usize> {
        self.inputs.first().map(JointInput::q)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&JointInput, f64)> {
        self.inputs.iter().zip(self.outputs.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(zeta: Vec<f64>, tau2: f64) -> KernelParams {
        KernelParams::new(zeta, tau2, 1e-8)
    }

    #[test]
    fn matern_at_zero_distance_is_tau2() {
        let z = JointInput::new(&[0.3], &[0.7]);
        assert_eq!(matern15(&z, &z, &k(vec![1.0, -0.5], 2.5)).unwrap(), 2.5);
    }

    #[test]
    fn matern_one_dimensional_value() {
        let a = JointInput::from_concat(vec![0.0], 0);
        let b = JointInput::from_concat(vec![1.0], 0);
        let v = matern15(&a, &b, &k(vec![0.0], 1.0)).unwrap();
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.735759).abs() < 1e-6);
    }

    #[test]
    fn matern_is_separable() {
        let a = JointInput::new(&[0.0], &[0.0]);
        let b = JointInput::new(&[1.0], &[1.0]);
        let v = matern15(&a, &b, &k(vec![0.0, 0.0], 1.0)).unwrap();
        assert!((v - (2.0 * (-1.0f64).exp()).powi(2)).abs() < 1e-15);
        assert!((v - 0.541341).abs() < 1e-6);
    }

    #[test]
    fn matern_rejects_dimension_mismatch() {
        let a = JointInput::new(&[0.0], &[0.0]);
        assert!(matches!(
            matern15(&a, &a, &k(vec![0.0; 3], 1.0)),
            Err(GpError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn standardization_of_constant_outputs_keeps_unit_scale() {
        let s = Standardization::from_outputs(&[4.0, 4.0, 4.0]);
        assert_eq!(s, Standardization { center: 4.0, scale: 1.0 });
        let s = Standardization::from_outputs(&[1.0, 3.0]);
        assert!((s.scale - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.invert(s.apply(7.25)) - 7.25).abs() < 1e-15);
    }

    #[test]
    fn dataset_rejects_mixed_shapes() {
        let mut d = SimDataset::new();
        d.push(JointInput::new(&[0.1], &[0.2]), 1.0).unwrap();
        assert!(d.push(JointInput::new(&[0.1, 0.3], &[0.2]), 1.0).is_err());
        assert!(d.push(JointInput::new(&[0.1], &[0.2]), f64::NAN).is_err());
        assert_eq!(d.len(), 1);
    }
}
