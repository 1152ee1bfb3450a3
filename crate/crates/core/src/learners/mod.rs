//! Pluggable regression and classification learners.
//!
//! Nuisance fitting only talks to the two capabilities below; the concrete
//! learners are IRLS generalized linear models, Nadaraya-Watson smoothers,
//! constant (sample-mean) fits and oracle adapters around known truths.

mod constant;
mod glm;
mod kernel;
mod oracle;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use constant::{ConstantClassifier, ConstantRegressor};
pub use glm::{Basis, GlmClassifier, GlmRegressor, Link};
pub use kernel::{silverman_bandwidth, Bandwidth, KernelClassifier, KernelRegressor};
pub use oracle::{OracleClassifier, OracleRegressor, OracleTarget, TrueNuisances};

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "feature matrix shape mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged feature rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }
}

pub trait Regressor: Send + Sync {
    fn fit(&mut self, inputs: &FeatureMatrix, targets: &[f64], weights: Option<&[f64]>)
        -> Result<()>;
    fn predict(&self, input: &[f64]) -> f64;
}

pub trait ProbabilisticClassifier: Send + Sync {
    /// Fits on labels in `0..n_classes`.
    fn fit(&mut self, inputs: &FeatureMatrix, labels: &[usize], n_classes: usize) -> Result<()>;
    /// Probability vector over the `n_classes` classes.
    fn predict_proba(&self, input: &[f64]) -> Vec<f64>;
}

fn default_ridge() -> f64 {
    1e-3
}

fn default_max_iter() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-10
}

fn default_scale() -> f64 {
    1.0
}

/// One learner choice with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerKind {
    /// Logistic / multinomial-logistic (identity link for unbounded targets)
    /// fitted by IRLS with ridge damping.
    Logistic {
        #[serde(default)]
        basis: Basis,
        #[serde(default = "default_ridge")]
        ridge: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// Gaussian-kernel Nadaraya-Watson smoother.
    Kernel {
        /// Multiplier on Silverman's rule.
        #[serde(default = "default_scale")]
        bandwidth_scale: f64,
        /// Per-dimension bandwidths overriding Silverman's rule.
        #[serde(default)]
        bandwidth: Option<Vec<f64>>,
    },
    /// Wraps the true nuisance functions of a simulation design.
    Oracle,
    /// Sample means, ignoring the inputs.
    Constant,
}

impl LearnerKind {
    /// Default-parameter learner from a bare name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "logistic" => Ok(Self::logistic(Basis::Raw)),
            "kernel" => Ok(Self::kernel()),
            "oracle" => Ok(Self::Oracle),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Config(format!(
                "unknown learner `{other}` (expected logistic, kernel, oracle or constant)"
            ))),
        }
    }

    pub fn logistic(basis: Basis) -> Self {
        Self::Logistic {
            basis,
            ridge: default_ridge(),
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    pub fn kernel() -> Self {
        Self::Kernel {
            bandwidth_scale: 1.0,
            bandwidth: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Logistic { .. } => "logistic",
            Self::Kernel { .. } => "kernel",
            Self::Oracle => "oracle",
            Self::Constant => "constant",
        }
    }

    fn bandwidth(bandwidth_scale: f64, bandwidth: &Option<Vec<f64>>) -> Bandwidth {
        match bandwidth {
            Some(h) => Bandwidth::Fixed(h.clone()),
            None => Bandwidth::Silverman {
                scale: bandwidth_scale,
            },
        }
    }
}

/// Learner choice per nuisance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    /// Used for every nuisance without an override.
    pub default: LearnerKind,
    #[serde(default)]
    pub pi: Option<LearnerKind>,
    #[serde(default)]
    pub lambda: Option<LearnerKind>,
    #[serde(default)]
    pub beta: Option<LearnerKind>,
    #[serde(default)]
    pub gamma: Option<LearnerKind>,
    /// Fit the second stage on a disjoint half of the training fold.
    #[serde(default)]
    pub nested_split: bool,
    /// Fall back to a constant missingness propensity when the training
    /// fold has no variation in the missingness flag.
    #[serde(default)]
    pub degenerate_fallback: bool,
}

impl LearnerSpec {
    pub fn uniform(kind: LearnerKind) -> Self {
        Self {
            default: kind,
            pi: None,
            lambda: None,
            beta: None,
            gamma: None,
            nested_split: false,
            degenerate_fallback: false,
        }
    }

    pub fn pi_kind(&self) -> &LearnerKind {
        self.pi.as_ref().unwrap_or(&self.default)
    }

    pub fn lambda_kind(&self) -> &LearnerKind {
        self.lambda.as_ref().unwrap_or(&self.default)
    }

    pub fn beta_kind(&self) -> &LearnerKind {
        self.beta.as_ref().unwrap_or(&self.default)
    }

    pub fn gamma_kind(&self) -> &LearnerKind {
        self.gamma.as_ref().unwrap_or(&self.default)
    }

    pub fn describe(&self) -> String {
        format!(
            "pi={}, lambda={}, beta={}, gamma={}",
            self.pi_kind().name(),
            self.lambda_kind().name(),
            self.beta_kind().name(),
            self.gamma_kind().name()
        )
    }

    pub fn uses_oracle(&self) -> bool {
        [
            self.pi_kind(),
            self.lambda_kind(),
            self.beta_kind(),
            self.gamma_kind(),
        ]
        .iter()
        .any(|k| matches!(k, LearnerKind::Oracle))
    }
}

/// A learner specification together with the truth the oracle learner wraps.
#[derive(Clone)]
pub struct LearnerSet {
    pub spec: LearnerSpec,
    pub truth: Option<Arc<dyn TrueNuisances>>,
}

impl std::fmt::Debug for LearnerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LearnerSet")
            .field("spec", &self.spec)
            .field("truth", &self.truth.is_some())
            .finish()
    }
}

impl LearnerSet {
    pub fn new(spec: LearnerSpec) -> Self {
        Self { spec, truth: None }
    }

    pub fn with_truth(spec: LearnerSpec, truth: Arc<dyn TrueNuisances>) -> Self {
        Self {
            spec,
            truth: Some(truth),
        }
    }

    pub fn oracle(truth: Arc<dyn TrueNuisances>) -> Self {
        Self::with_truth(LearnerSpec::uniform(LearnerKind::Oracle), truth)
    }

    fn truth(&self) -> Result<Arc<dyn TrueNuisances>> {
        self.truth
            .clone()
            .ok_or_else(|| Error::Config("oracle learner requested but no truth is available".into()))
    }

    pub(crate) fn classifier(
        &self,
        kind: &LearnerKind,
        target: OracleTarget,
    ) -> Result<Box<dyn ProbabilisticClassifier>> {
        Ok(match kind {
            LearnerKind::Logistic {
                basis,
                ridge,
                max_iter,
                tol,
            } => Box::new(GlmClassifier::new(*basis, *ridge, *max_iter, *tol)),
            LearnerKind::Kernel {
                bandwidth_scale,
                bandwidth,
            } => Box::new(KernelClassifier::new(LearnerKind::bandwidth(
                *bandwidth_scale,
                bandwidth,
            ))),
            LearnerKind::Oracle => Box::new(OracleClassifier::new(self.truth()?, target)),
            LearnerKind::Constant => Box::new(ConstantClassifier::default()),
        })
    }

    pub(crate) fn regressor(
        &self,
        kind: &LearnerKind,
        target: OracleTarget,
        link: Link,
    ) -> Result<Box<dyn Regressor>> {
        Ok(match kind {
            LearnerKind::Logistic {
                basis,
                ridge,
                max_iter,
                tol,
            } => Box::new(GlmRegressor::new(link, *basis, *ridge, *max_iter, *tol)),
            LearnerKind::Kernel {
                bandwidth_scale,
                bandwidth,
            } => Box::new(KernelRegressor::new(LearnerKind::bandwidth(
                *bandwidth_scale,
                bandwidth,
            ))),
            LearnerKind::Oracle => Box::new(OracleRegressor::new(self.truth()?, target)),
            LearnerKind::Constant => Box::new(ConstantRegressor::default()),
        })
    }
}
