//! Generalized linear learners fitted by iteratively reweighted least squares.
//!
//! The multinomial-logit core handles binary and k-class classification as
//! well as fractional responses in `[0, 1]` (quasi-binomial regression of
//! pseudo-outcomes). A ridge penalty on the slopes keeps Newton steps finite
//! on separable data. The identity link reduces to weighted ridge least
//! squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, ProbabilisticClassifier, Regressor};
use crate::error::{Error, Result};

/// Penalty on the intercept; tiny, only to keep the intercept finite when a
/// class is absent.
const INTERCEPT_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    #[default]
    Raw,
    /// Raw terms plus squares and pairwise products. Squares of two-valued
    /// columns are skipped since they duplicate the raw column.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Identity,
}

/// Standardization and basis expansion learned at fit time.
#[derive(Debug, Clone, Default)]
struct Design {
    basis: Basis,
    center: Vec<f64>,
    scale: Vec<f64>,
    square: Vec<bool>,
}

impl Design {
    fn learn(basis: Basis, inputs: &FeatureMatrix) -> Self {
        let cols = inputs.cols();
        let n = inputs.rows().max(1) as f64;
        let mut center = vec![0.0; cols];
        for row in inputs.iter_rows() {
            for (c, v) in center.iter_mut().zip(row) {
                *c += v / n;
            }
        }
        let mut scale = vec![0.0; cols];
        for row in inputs.iter_rows() {
            for j in 0..cols {
                scale[j] += (row[j] - center[j]).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let square = (0..cols)
            .map(|j| {
                let mut seen: Vec<f64> = Vec::with_capacity(3);
                for row in inputs.iter_rows() {
                    if !seen.contains(&row[j]) {
                        seen.push(row[j]);
                        if seen.len() > 2 {
                            return true;
                        }
                    }
                }
                false
            })
            .collect();
        Self {
            basis,
            center,
            scale,
            square,
        }
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (c, s))| (v - c) / s)
            .collect();
        let mut out = Vec::with_capacity(1 + z.len() * (z.len() + 3) / 2);
        out.push(1.0);
        out.extend_from_slice(&z);
        if self.basis == Basis::Quadratic {
            for i in 0..z.len() {
                for j in i..z.len() {
                    if i == j && !self.square[i] {
                        continue;
                    }
                    out.push(z[i] * z[j]);
                }
            }
        }
        out
    }

    fn matrix(&self, inputs: &FeatureMatrix) -> Vec<Vec<f64>> {
        inputs.iter_rows().map(|r| self.expand(r)).collect()
    }
}

fn solve_spd(h: DMatrix<f64>, g: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = h.clone().cholesky() {
        return Ok(chol.solve(&g));
    }
    h.lu()
        .solve(&g)
        .ok_or_else(|| Error::DegenerateFit {
            stage: "irls",
            fold: None,
            message: "singular Newton system".into(),
        })
}

fn softmax_probs(eta: &[f64]) -> Vec<f64> {
    // eta excludes the reference class, whose linear predictor is 0.
    let max = eta.iter().cloned().fold(0.0_f64, f64::max);
    let mut probs = Vec::with_capacity(eta.len() + 1);
    probs.push((-max).exp());
    probs.extend(eta.iter().map(|e| (e - max).exp()));
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Multinomial-logit coefficients: `(classes - 1) x q`, class 0 as reference.
#[derive(Debug, Clone, Default)]
struct MultinomialFit {
    coef: Vec<Vec<f64>>,
}

impl MultinomialFit {
    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let eta: Vec<f64> = self
            .coef
            .iter()
            .map(|b| b.iter().zip(x).map(|(b, x)| b * x).sum())
            .collect();
        softmax_probs(&eta)
    }

    fn penalized_loglik(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], ws: &[f64], ridge: f64) -> f64 {
        let mut ll = 0.0;
        for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
            let p = self.probs(x);
            for (yc, pc) in y.iter().zip(&p) {
                if *yc > 0.0 {
                    ll += w * yc * pc.max(1e-300).ln();
                }
            }
        }
        ll - 0.5 * self.penalty(ridge)
    }

    fn penalty(&self, ridge: f64) -> f64 {
        self.coef
            .iter()
            .map(|b| {
                INTERCEPT_RIDGE * b[0] * b[0] + ridge * b[1..].iter().map(|v| v * v).sum::<f64>()
            })
            .sum()
    }

    /// Newton-Raphson with step halving on the penalized log-likelihood.
    fn fit(
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        ws: &[f64],
        classes: usize,
        ridge: f64,
        max_iter: usize,
        tol: f64,
    ) -> Result<Self> {
        let q = xs.first().map_or(1, Vec::len);
        let m = classes - 1;
        let dim = m * q;
        let total_w: f64 = ws.iter().sum();
        let mut fit = MultinomialFit {
            coef: vec![vec![0.0; q]; m],
        };
        // Start the intercepts at the log frequency ratios.
        let mut freq = vec![0.0; classes];
        for (y, w) in ys.iter().zip(ws) {
            for (f, yc) in freq.iter_mut().zip(y) {
                *f += w * yc / total_w;
            }
        }
        for c in 0..m {
            let num = freq[c + 1].max(1e-6);
            let den = freq[0].max(1e-6);
            fit.coef[c][0] = (num / den).ln();
        }

        let mut ll = fit.penalized_loglik(xs, ys, ws, ridge);
        for _ in 0..max_iter {
            let mut grad = DVector::<f64>::zeros(dim);
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
                let p = fit.probs(x);
                for c in 0..m {
                    let resid = y[c + 1] - p[c + 1];
                    for j in 0..q {
                        grad[c * q + j] += w * resid * x[j];
                    }
                    for c2 in 0..m {
                        let wc = w * p[c + 1] * (f64::from(u8::from(c == c2)) - p[c2 + 1]);
                        if wc == 0.0 {
                            continue;
                        }
                        for j in 0..q {
                            let a = wc * x[j];
                            for j2 in 0..q {
                                hess[(c * q + j, c2 * q + j2)] += a * x[j2];
                            }
                        }
                    }
                }
            }
            for c in 0..m {
                for j in 0..q {
                    let r = if j == 0 { INTERCEPT_RIDGE } else { ridge };
                    grad[c * q + j] -= r * fit.coef[c][j];
                    hess[(c * q + j, c * q + j)] += r;
                }
            }
            let step = solve_spd(hess, grad)?;
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let mut cand = fit.clone();
                for c in 0..m {
                    for j in 0..q {
                        cand.coef[c][j] += scale * step[c * q + j];
                    }
                }
                let cand_ll = cand.penalized_loglik(xs, ys, ws, ridge);
                if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                    accepted = Some((cand, cand_ll));
                    break;
                }
                scale *= 0.5;
            }
            let Some((cand, cand_ll)) = accepted else {
                break;
            };
            let moved = step.amax() * scale;
            let gain = cand_ll - ll;
            fit = cand;
            ll = cand_ll;
            if moved < tol || gain.abs() < tol * (ll.abs() + 1.0) {
                break;
            }
        }
        if fit.coef.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IRLS coefficients".into()));
        }
        Ok(fit)
    }
}

/// Binary or multinomial logistic classifier.
#[derive(Debug, Clone)]
pub struct GlmClassifier {
    ridge: f64,
    max_iter: usize,
    tol: f64,
    design: Design,
    fit: MultinomialFit,
    classes: usize,
}

impl GlmClassifier {
    pub fn new(basis: Basis, ridge: f64, max_iter: usize, tol: f64) -> Self {
        Self {
            ridge,
            max_iter,
            tol,
            design: Design {
                basis,
                ..Design::default()
            },
            fit: MultinomialFit::default(),
            classes: 0,
        }
    }
}

impl ProbabilisticClassifier for GlmClassifier {
    fn fit(&mut self, inputs: &FeatureMatrix, labels: &[usize], n_classes: usize) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::Config("classifier needs at least two classes".into()));
        }
        if inputs.rows() == 0 {
            return Err(Error::DegenerateFit {
                stage: "logistic",
                fold: None,
                message: "no training rows".into(),
            });
        }
        self.design = Design::learn(self.design.basis, inputs);
        let xs = self.design.matrix(inputs);
        let ys: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..n_classes).map(|c| f64::from(u8::from(c == l))).collect())
            .collect();
        let ws = vec![1.0; xs.len()];
        self.fit = MultinomialFit::fit(
            &xs,
            &ys,
            &ws,
            n_classes,
            self.ridge,
            self.max_iter,
            self.tol,
        )?;
        self.classes = n_classes;
        Ok(())
    }

    fn predict_proba(&self, input: &[f64]) -> Vec<f64> {
        self.fit.probs(&self.design.expand(input))
    }
}

/// GLM regressor: logit link for responses in `[0, 1]`, identity otherwise.
#[derive(Debug, Clone)]
pub struct GlmRegressor {
    link: Link,
    ridge: f64,
    max_iter: usize,
    tol: f64,
    design: Design,
    logit_fit: MultinomialFit,
    linear_coef: Vec<f64>,
}

impl GlmRegressor {
    pub fn new(link: Link, basis: Basis, ridge: f64, max_iter: usize, tol: f64) -> Self {
        Self {
            link,
            ridge,
            max_iter,
            tol,
            design: Design {
                basis,
                ..Design::default()
            },
            logit_fit: MultinomialFit::default(),
            linear_coef: Vec::new(),
        }
    }
}

impl Regressor for GlmRegressor {
    fn fit(
        &mut self,
        inputs: &FeatureMatrix,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<()> {
        if inputs.rows() == 0 {
            return Err(Error::DegenerateFit {
                stage: "glm",
                fold: None,
                message: "no training rows".into(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("regression targets".into()));
        }
        self.design = Design::learn(self.design.basis, inputs);
        let xs = self.design.matrix(inputs);
        let ws: Vec<f64> = weights.map_or_else(|| vec![1.0; xs.len()], <[f64]>::to_vec);
        match self.link {
            Link::Logit => {
                if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(Error::Config(
                        "logit-link regression needs targets in [0, 1]".into(),
                    ));
                }
                let ys: Vec<Vec<f64>> = targets.iter().map(|&t| vec![1.0 - t, t]).collect();
                self.logit_fit =
                    MultinomialFit::fit(&xs, &ys, &ws, 2, self.ridge, self.max_iter, self.tol)?;
            }
            Link::Identity => {
                let q = xs[0].len();
                let mut xtx = DMatrix::<f64>::zeros(q, q);
                let mut xty = DVector::<f64>::zeros(q);
                for ((x, y), w) in xs.iter().zip(targets).zip(&ws) {
                    for a in 0..q {
                        xty[a] += w * x[a] * y;
                        for b in 0..q {
                            xtx[(a, b)] += w * x[a] * x[b];
                        }
                    }
                }
                for a in 0..q {
                    xtx[(a, a)] += if a == 0 { INTERCEPT_RIDGE } else { self.ridge };
                }
                self.linear_coef = solve_spd(xtx, xty)?.iter().copied().collect();
            }
        }
        Ok(())
    }

    fn predict(&self, input: &[f64]) -> f64 {
        let x = self.design.expand(input);
        match self.link {
            Link::Logit => self.logit_fit.probs(&x)[1],
            Link::Identity => self.linear_coef.iter().zip(&x).map(|(b, x)| b * x).sum(),
        }
    }
}
