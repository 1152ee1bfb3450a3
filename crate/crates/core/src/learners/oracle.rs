use std::sync::Arc;

use super::{FeatureMatrix, ProbabilisticClassifier, Regressor};
use crate::error::Result;

/// Known nuisance functions of a data-generating law.
///
/// `x` is a covariate vector, `y` an outcome vector; levels are indices.
pub trait TrueNuisances: Send + Sync {
    fn levels(&self) -> usize;
    fn covariate_dim(&self) -> usize;
    /// `P(R = 1 | X = x, Y = y)`.
    fn pi(&self, x: &[f64], y: &[f64]) -> f64;
    /// `P(Z = z | X = x, Y = y, R = 1)` for every level.
    fn lambda(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    /// `E{Y lambda_z(X, Y) | X = x}`.
    fn beta(&self, x: &[f64], z: usize) -> Vec<f64>;
    /// `E{lambda_z(X, Y) | X = x}` for every level.
    fn gamma(&self, x: &[f64]) -> Vec<f64>;
}

/// Which nuisance an oracle adapter reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleTarget {
    Pi,
    Lambda,
    Beta { level: usize, coord: usize },
    Gamma { level: usize },
}

/// Classifier whose fit is a no-op and whose predictions are the truth.
/// Inputs are `(x, y)` concatenated.
pub struct OracleClassifier {
    truth: Arc<dyn TrueNuisances>,
    target: OracleTarget,
}

impl OracleClassifier {
    pub fn new(truth: Arc<dyn TrueNuisances>, target: OracleTarget) -> Self {
        Self { truth, target }
    }
}

impl ProbabilisticClassifier for OracleClassifier {
    fn fit(&mut self, _inputs: &FeatureMatrix, _labels: &[usize], _n: usize) -> Result<()> {
        Ok(())
    }

    fn predict_proba(&self, input: &[f64]) -> Vec<f64> {
        let (x, y) = input.split_at(self.truth.covariate_dim());
        match self.target {
            OracleTarget::Pi => {
                let p = self.truth.pi(x, y);
                vec![1.0 - p, p]
            }
            OracleTarget::Lambda => self.truth.lambda(x, y),
            other => panic!("oracle classifier cannot reproduce {other:?}"),
        }
    }
}

/// Regressor counterpart of [`OracleClassifier`]; inputs are covariates.
pub struct OracleRegressor {
    truth: Arc<dyn TrueNuisances>,
    target: OracleTarget,
}

impl OracleRegressor {
    pub fn new(truth: Arc<dyn TrueNuisances>, target: OracleTarget) -> Self {
        Self { truth, target }
    }
}

impl Regressor for OracleRegressor {
    fn fit(&mut self, _inputs: &FeatureMatrix, _t: &[f64], _w: Option<&[f64]>) -> Result<()> {
        Ok(())
    }

    fn predict(&self, input: &[f64]) -> f64 {
        match self.target {
            OracleTarget::Beta { level, coord } => self.truth.beta(input, level)[coord],
            OracleTarget::Gamma { level } => self.truth.gamma(input)[level],
            other => panic!("oracle regressor cannot reproduce {other:?}"),
        }
    }
}
