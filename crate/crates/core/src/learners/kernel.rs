//! Nadaraya-Watson smoothing with a product Gaussian kernel.

use std::collections::HashMap;

use super::{FeatureMatrix, ProbabilisticClassifier, Regressor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule of thumb per input dimension, times `scale`.
    Silverman { scale: f64 },
    Fixed(Vec<f64>),
}

/// `h_j = scale * sd_j * (4 / ((q + 2) n))^(1 / (q + 4))`; a constant column
/// gets unit bandwidth.
pub fn silverman_bandwidth(inputs: &FeatureMatrix, scale: f64) -> Vec<f64> {
    let n = inputs.rows() as f64;
    let q = inputs.cols() as f64;
    let factor = (4.0 / ((q + 2.0) * n)).powf(1.0 / (q + 4.0));
    (0..inputs.cols())
        .map(|j| {
            let mean = inputs.iter_rows().map(|r| r[j]).sum::<f64>() / n;
            let var = inputs
                .iter_rows()
                .map(|r| (r[j] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            if sd > 1e-12 {
                scale * sd * factor
            } else {
                1.0
            }
        })
        .collect()
}

/// Training data compressed to distinct input rows with summed weights and
/// weighted target sums. Predictions are unchanged by the compression.
#[derive(Debug, Clone, Default)]
struct Smoother {
    inv_h: Vec<f64>,
    points: Vec<Vec<f64>>,
    mass: Vec<f64>,
    sums: Vec<Vec<f64>>,
}

impl Smoother {
    fn fit(
        bandwidth: &Bandwidth,
        inputs: &FeatureMatrix,
        targets: &[Vec<f64>],
        weights: Option<&[f64]>,
    ) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::DegenerateFit {
                stage: "kernel",
                fold: None,
                message: "no training rows".into(),
            });
        }
        let h = match bandwidth {
            Bandwidth::Silverman { scale } => silverman_bandwidth(inputs, *scale),
            Bandwidth::Fixed(h) => {
                if h.len() != inputs.cols() || h.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Config(format!(
                        "kernel bandwidth needs {} positive entries",
                        inputs.cols()
                    )));
                }
                h.clone()
            }
        };
        let m = targets.first().map_or(0, Vec::len);
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut smoother = Smoother {
            inv_h: h.iter().map(|v| 1.0 / v).collect(),
            ..Smoother::default()
        };
        for (i, row) in inputs.iter_rows().enumerate() {
            let w = weights.map_or(1.0, |ws| ws[i]);
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let slot = *index.entry(key).or_insert_with(|| {
                smoother
                    .points
                    .push(row.iter().zip(&smoother.inv_h).map(|(v, s)| v * s).collect());
                smoother.mass.push(0.0);
                smoother.sums.push(vec![0.0; m]);
                smoother.points.len() - 1
            });
            smoother.mass[slot] += w;
            for (s, t) in smoother.sums[slot].iter_mut().zip(&targets[i]) {
                *s += w * t;
            }
        }
        Ok(smoother)
    }

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = x.iter().zip(&self.inv_h).map(|(v, s)| v * s).collect();
        let dist: Vec<f64> = self
            .points
            .iter()
            .map(|p| p.iter().zip(&scaled).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let nearest = dist.iter().cloned().fold(f64::INFINITY, f64::min);
        let m = self.sums.first().map_or(0, Vec::len);
        let mut num = vec![0.0; m];
        let mut den = 0.0;
        for ((d, mass), sums) in dist.iter().zip(&self.mass).zip(&self.sums) {
            let k = (-0.5 * (d - nearest)).exp();
            den += k * mass;
            for (acc, s) in num.iter_mut().zip(sums) {
                *acc += k * s;
            }
        }
        num.into_iter().map(|v| v / den).collect()
    }
}

#[derive(Debug, Clone)]
pub struct KernelRegressor {
    bandwidth: Bandwidth,
    smoother: Smoother,
}

impl KernelRegressor {
    pub fn new(bandwidth: Bandwidth) -> Self {
        Self {
            bandwidth,
            smoother: Smoother::default(),
        }
    }
}

impl Regressor for KernelRegressor {
    fn fit(
        &mut self,
        inputs: &FeatureMatrix,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<()> {
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("regression targets".into()));
        }
        let rows: Vec<Vec<f64>> = targets.iter().map(|&t| vec![t]).collect();
        self.smoother = Smoother::fit(&self.bandwidth, inputs, &rows, weights)?;
        Ok(())
    }

    fn predict(&self, input: &[f64]) -> f64 {
        self.smoother.predict(input)[0]
    }
}

#[derive(Debug, Clone)]
pub struct KernelClassifier {
    bandwidth: Bandwidth,
    smoother: Smoother,
}

impl KernelClassifier {
    pub fn new(bandwidth: Bandwidth) -> Self {
        Self {
            bandwidth,
            smoother: Smoother::default(),
        }
    }
}

impl ProbabilisticClassifier for KernelClassifier {
    fn fit(&mut self, inputs: &FeatureMatrix, labels: &[usize], n_classes: usize) -> Result<()> {
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..n_classes).map(|c| f64::from(u8::from(c == l))).collect())
            .collect();
        self.smoother = Smoother::fit(&self.bandwidth, inputs, &rows, None)?;
        Ok(())
    }

    fn predict_proba(&self, input: &[f64]) -> Vec<f64> {
        self.smoother.predict(input)
    }
}
