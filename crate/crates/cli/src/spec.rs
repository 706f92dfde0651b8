//! Experiment specification files.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use seqcal::designer::{DiscrepancyMode, InitialDesign, Method};
use seqcal::testbeds::{ExternalSimSpec, SyntheticModel, Testbed};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    /// `sine2d`, `ranjan3d` or `highdim-<q>-<p>`.
    pub testbed: String,
    #[serde(default)]
    pub discrepancy: bool,
    pub methods: Vec<Method>,
    pub n0: usize,
    pub n: usize,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial_design: InitialDesign,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub candidates: CandidateSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub fit: FitSpec,
    /// Covariance handling; defaults to fitting when the testbed has a
    /// discrepancy and to the known noise otherwise.
    pub field_covariance: Option<DiscrepancyMode>,
    #[serde(default)]
    pub method_options: MethodOptions,
    pub external: Option<ExternalSpec>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub n_pair: Option<usize>,
    pub n_explore: Option<usize>,
}

/// Reference-set sizes. One-dimensional sets are equally spaced grids, the
/// `x` set of a two-dimensional design space is a square grid with `x` points
/// per axis, and everything else is a Latin hypercube.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub theta: Option<usize>,
    pub x: Option<usize>,
    pub z: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub initial_starts: usize,
    pub refit_starts: usize,
    pub theta_hat_evals: usize,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self { initial_starts: 8, refit_starts: 2, theta_hat_evals: 200 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodOptions {
    #[serde(default, rename = "ay-fixed")]
    pub ay_fixed: AyFixedOptions,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AyFixedOptions {
    /// Parameter in natural units; defaults to the testbed's true value.
    pub theta: Option<Vec<f64>>,
}

/// A simulator process implementing the testbed's model. Field data and
/// reference truth still come from the built-in testbed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    pub command: Vec<String>,
    pub working_dir: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    60.0
}

/// Problems found while loading or validating a spec.
#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid spec: {0}")]
    Invalid(String),
}

/// Spec with defaults filled in.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub spec: ExperimentSpec,
    pub model: SyntheticModel,
    pub n_pair: usize,
    pub n_explore: usize,
    pub theta_ref: usize,
    pub x_ref: usize,
    pub z_ref: usize,
    pub field_covariance: DiscrepancyMode,
    pub theta_fixed: Vec<f64>,
    pub external: Option<ExternalSimSpec>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, SpecError> {
        Ok(toml::from_str(text)?)
    }

    pub fn resolve(&self) -> Result<Resolved, SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let Some(testbed) = Testbed::parse(&self.testbed) else {
            return bad(format!("unknown testbed `{}`", self.testbed));
        };
        let Some(model) = SyntheticModel::from_testbed(testbed, self.discrepancy) else {
            return bad(format!("testbed `{}` has no field-data setup{}", self.testbed, if self.discrepancy { " with a discrepancy" } else { "" }));
        };
        if self.methods.is_empty() {
            return bad("no methods listed".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.n0 < 2 {
            return bad("n0 must be at least 2".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        let f = &self.fit;
        if f.initial_starts == 0 || f.refit_starts == 0 {
            return bad("fits need at least one optimizer start".into());
        }

        let (q, p) = (model.q(), model.p());
        let (n_pair_default, n_explore_default, ref_default) = match testbed {
            Testbed::Sine2D => (100, 500, (100, 100)),
            Testbed::Ranjan3D => (100, 900, (100, 20)),
            Testbed::HighDim { .. } => (500, 1000, (1500, 1500)),
        };
        let n_pair = self.candidates.n_pair.unwrap_or(n_pair_default);
        let n_explore = self.candidates.n_explore.unwrap_or(n_explore_default);
        let theta_ref = self.reference.theta.unwrap_or(ref_default.0);
        let x_ref = self.reference.x.unwrap_or(ref_default.1);
        let z_ref = self.reference.z.unwrap_or(theta_ref);
        if theta_ref < 2 || x_ref < 2 || z_ref < 1 {
            return bad("reference sets need at least two points".into());
        }

        let scaling = model.scaling();
        let (_, stheta) = scaling.split(q);
        let theta_fixed = match &self.method_options.ay_fixed.theta {
            Some(t) if t.len() != p => return bad(format!("method_options.ay-fixed.theta needs {p} values")),
            Some(t) => stheta.to_unit(t),
            None => model.theta_true_unit(),
        };

        let field_covariance = self
            .field_covariance
            .unwrap_or(if self.discrepancy { DiscrepancyMode::Fit } else { DiscrepancyMode::Known });

        let external = match &self.external {
            None => None,
            Some(e) => {
                if e.command.is_empty() {
                    return bad("external.command is empty".into());
                }
                if !(e.timeout_secs.is_finite() && e.timeout_secs > 0.0) {
                    return bad("external.timeout_secs must be positive".into());
                }
                Some(ExternalSimSpec {
                    command: e.command.clone(),
                    working_dir: e.working_dir.clone(),
                    timeout: Duration::from_secs_f64(e.timeout_secs),
                    q,
                    p,
                    scaling: Some(scaling.clone()),
                })
            }
        };

        Ok(Resolved {
            spec: self.clone(),
            model,
            n_pair,
            n_explore,
            theta_ref,
            x_ref,
            z_ref,
            field_covariance,
            theta_fixed,
            external,
        })
    }
}
