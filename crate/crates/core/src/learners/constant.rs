use super::{FeatureMatrix, ProbabilisticClassifier, Regressor};
use crate::error::{Error, Result};

/// Weighted sample mean, ignoring inputs.
#[derive(Debug, Clone, Default)]
pub struct ConstantRegressor {
    value: f64,
}

impl Regressor for ConstantRegressor {
    fn fit(
        &mut self,
        _inputs: &FeatureMatrix,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<()> {
        if targets.is_empty() {
            return Err(Error::DegenerateFit {
                stage: "constant",
                fold: None,
                message: "no training rows".into(),
            });
        }
        let (num, den) = match weights {
            Some(w) => (
                targets.iter().zip(w).map(|(t, w)| t * w).sum::<f64>(),
                w.iter().sum::<f64>(),
            ),
            None => (targets.iter().sum::<f64>(), targets.len() as f64),
        };
        self.value = num / den;
        if !self.value.is_finite() {
            return Err(Error::NonFinite("constant fit".into()));
        }
        Ok(())
    }

    fn predict(&self, _input: &[f64]) -> f64 {
        self.value
    }
}

/// Class frequencies, ignoring inputs.
#[derive(Debug, Clone, Default)]
pub struct ConstantClassifier {
    probs: Vec<f64>,
}

impl ProbabilisticClassifier for ConstantClassifier {
    fn fit(&mut self, _inputs: &FeatureMatrix, labels: &[usize], n_classes: usize) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::DegenerateFit {
                stage: "constant",
                fold: None,
                message: "no training rows".into(),
            });
        }
        let mut counts = vec![0.0; n_classes];
        for &l in labels {
            counts[l] += 1.0;
        }
        let n = labels.len() as f64;
        self.probs = counts.into_iter().map(|c| c / n).collect();
        Ok(())
    }

    fn predict_proba(&self, _input: &[f64]) -> Vec<f64> {
        self.probs.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_mean() {
        let x = FeatureMatrix::new(3, 0, vec![]);
        let mut r = ConstantRegressor::default();
        r.fit(&x, &[1.0, 2.0, 3.0], Some(&[1.0, 1.0, 2.0])).unwrap();
        assert!((r.predict(&[]) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn class_frequencies() {
        let x = FeatureMatrix::new(4, 0, vec![]);
        let mut c = ConstantClassifier::default();
        c.fit(&x, &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(c.predict_proba(&[]), vec![0.25, 0.75]);
    }
}
