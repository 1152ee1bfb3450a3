//! Cross-fitted one-step estimation of counterfactual means.
//!
//! For each level `z` the uncentered efficient influence function is
//!
//! ```text
//! phi_z(O) = {(Y - m_z(X)) / gamma_z(X)} [R {1(Z = z) - lambda_z(X, Y)} / pi(X, Y) + lambda_z(X, Y)] + m_z(X)
//! ```
//!
//! with `m_z = beta_z / gamma_z`. The estimator averages `phi_z` evaluated
//! with nuisances fitted on the other folds; its sample covariance gives
//! Wald intervals.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ObservedSample};
use crate::error::{Error, Result};
use crate::learners::LearnerSet;
use crate::nuisance::{fit_all, NuisanceModel, NuisanceValues};
use crate::stats::{covariance, derive_seed, normal_quantile};

/// Evaluates `phi_z` from nuisance values at the record's `(x, y)`.
///
/// When the exposure is unobserved the bracket reduces to `lambda_z`.
#[allow(clippy::too_many_arguments)]
pub fn eif_from_values(
    outcomes: &[f64],
    observed: bool,
    exposure: Option<usize>,
    level: usize,
    pi: f64,
    lambda: f64,
    beta: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let indicator = if exposure == Some(level) { 1.0 } else { 0.0 };
    let bracket = if observed {
        (indicator - lambda) / pi + lambda
    } else {
        lambda
    };
    outcomes
        .iter()
        .zip(beta)
        .map(|(y, b)| {
            let m = b / gamma;
            (y - m) / gamma * bracket + m
        })
        .collect()
}

fn eif_at(o: &ObservedSample, v: &NuisanceValues, level: usize) -> Vec<f64> {
    eif_from_values(
        &o.outcomes,
        o.observed,
        o.exposure,
        level,
        v.pi,
        v.lambda[level],
        &v.beta[level],
        v.gamma[level],
    )
}

/// `phi_z` for one record under a fitted nuisance model.
pub fn eif_evaluate(o: &ObservedSample, nm: &NuisanceModel, level: usize) -> Result<Vec<f64>> {
    let v = nm.evaluate(&o.covariates, &o.outcomes);
    let phi = eif_at(o, &v, level);
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "influence function (pi = {}, lambda = {:?}, beta = {:?}, gamma = {:?})",
            v.pi, v.lambda, v.beta, v.gamma
        )));
    }
    Ok(phi)
}

/// Balanced assignment of `n` records to `folds` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub folds: usize,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles `0..n` with the seed and deals positions round-robin, so fold
/// sizes differ by at most one.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Fold(format!("need at least 2 folds, got {folds}")));
    }
    if n < 2 * folds {
        return Err(Error::Fold(format!(
            "{n} records cannot fill {folds} folds of at least two records"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(FoldPlan {
        n,
        folds,
        seed,
        assignment,
    })
}

fn default_folds() -> usize {
    2
}

fn default_eps() -> f64 {
    0.01
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossFitOptions {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Fit and evaluate on the full sample. Not covered by the cross-fitting
    /// guarantees; for experimentation only.
    #[serde(default)]
    pub unsafe_no_split: bool,
}

impl Default for CrossFitOptions {
    fn default() -> Self {
        Self {
            folds: default_folds(),
            seed: 0,
            eps: default_eps(),
            alpha: default_alpha(),
            unsafe_no_split: false,
        }
    }
}

impl CrossFitOptions {
    pub fn check(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Config(format!("eps must lie in (0, 0.5), got {}", self.eps)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Per-record `phi_z` values for one level, row-major `n x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    pub level: String,
    pub p: usize,
    pub values: Vec<f64>,
    /// Fold whose held-out evaluation produced each row.
    pub fold: Vec<usize>,
}

impl InfluenceMatrix {
    pub fn n(&self) -> usize {
        self.fold.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    /// Column means, accumulated in record order.
    pub fn mean(&self) -> Vec<f64> {
        column_means(&self.values, self.p)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.p).copied().collect()
    }
}

fn column_means(values: &[f64], p: usize) -> Vec<f64> {
    let n = values.len() / p;
    let mut sums = vec![0.0; p];
    for row in values.chunks_exact(p) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums.into_iter().map(|s| s / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    pub level: String,
    pub psi_hat: Vec<f64>,
    pub std_error: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub intervals: Vec<Interval>,
    /// Uncorrected plug-in average of `beta_z / gamma_z`.
    pub plugin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastEstimate {
    pub treated: String,
    pub reference: String,
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub intervals: Vec<Interval>,
    pub plugin: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClippingCounts {
    pub evaluations: usize,
    pub pi_clipped: usize,
    pub gamma_clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub folds: usize,
    pub alpha: f64,
    pub quantile: f64,
    pub learners: String,
    pub outcome_names: Vec<String>,
    pub levels: Vec<LevelEstimate>,
    /// Every pair `(treated, reference)` with the treated level later in the
    /// catalog. No multiplicity correction is applied.
    pub contrasts: Vec<ContrastEstimate>,
    pub clipping: ClippingCounts,
    pub fold_sizes: Vec<usize>,
}

impl EstimateReport {
    pub fn level(&self, label: &str) -> Option<&LevelEstimate> {
        self.levels.iter().find(|l| l.level == label)
    }

    pub fn contrast(&self, treated: &str, reference: &str) -> Option<&ContrastEstimate> {
        self.contrasts
            .iter()
            .find(|c| c.treated == treated && c.reference == reference)
    }
}

/// Full output of a cross-fit run.
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub report: EstimateReport,
    pub influence: Vec<InfluenceMatrix>,
    /// Per-record `beta_z / gamma_z`, row-major `n x p`, one per level.
    pub plugin_rows: Vec<Vec<f64>>,
    pub plan: FoldPlan,
}

struct FoldOutput {
    rows: Vec<(usize, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
    clipping: ClippingCounts,
}

fn evaluate_fold(
    data: &Dataset,
    train_idx: &[usize],
    eval_idx: &[usize],
    learners: &LearnerSet,
    opts: &CrossFitOptions,
    fold: usize,
) -> Result<FoldOutput> {
    let train = data.subset(train_idx);
    let model = fit_all(
        &train,
        learners,
        opts.eps,
        derive_seed(opts.seed, &[1, fold as u64]),
        Some(fold),
    )?;
    let k = data.k();
    let mut clipping = ClippingCounts::default();
    let mut rows = Vec::with_capacity(eval_idx.len());
    for &i in eval_idx {
        let o = &data.samples[i];
        let v = model.evaluate(&o.covariates, &o.outcomes);
        clipping.evaluations += 1;
        clipping.pi_clipped += usize::from(v.pi_clipped);
        clipping.gamma_clipped += v.gamma_clipped;
        let mut phi = Vec::with_capacity(k);
        let mut plug = Vec::with_capacity(k);
        for z in 0..k {
            let row = eif_at(o, &v, z);
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "influence function at record {i} (pi = {}, gamma = {:?})",
                    v.pi, v.gamma
                )));
            }
            phi.push(row);
            plug.push(v.beta[z].iter().map(|b| b / v.gamma[z]).collect());
        }
        rows.push((i, phi, plug));
    }
    Ok(FoldOutput { rows, clipping })
}

fn wald(estimate: &[f64], cov: &[Vec<f64>], n: usize, q: f64) -> (Vec<f64>, Vec<Interval>) {
    let se: Vec<f64> = (0..estimate.len())
        .map(|j| (cov[j][j].max(0.0) / n as f64).sqrt())
        .collect();
    let intervals = estimate
        .iter()
        .zip(&se)
        .map(|(e, s)| Interval {
            lower: e - q * s,
            upper: e + q * s,
        })
        .collect();
    (se, intervals)
}

/// Cross-fitted one-step estimates for every level plus pairwise contrasts.
pub fn crossfit_estimate(
    data: &Dataset,
    learners: &LearnerSet,
    opts: &CrossFitOptions,
) -> Result<CrossFit> {
    opts.check()?;
    let n = data.n();
    let plan = if opts.unsafe_no_split {
        FoldPlan {
            n,
            folds: 1,
            seed: opts.seed,
            assignment: vec![0; n],
        }
    } else {
        make_folds(n, opts.folds, opts.seed)?
    };
    crossfit_with_plan(data, learners, opts, plan)
}

/// Same as [`crossfit_estimate`] with a caller-supplied fold assignment.
pub fn crossfit_with_plan(
    data: &Dataset,
    learners: &LearnerSet,
    opts: &CrossFitOptions,
    plan: FoldPlan,
) -> Result<CrossFit> {
    opts.check()?;
    data.ensure_valid()?;
    let n = data.n();
    let k = data.k();
    let p = data.outcome_dim();
    if plan.n != n || plan.assignment.len() != n {
        return Err(Error::Fold(format!("plan covers {} records, data has {n}", plan.n)));
    }
    if plan.assignment.iter().any(|&f| f >= plan.folds) {
        return Err(Error::Fold(format!("fold index outside 0..{}", plan.folds)));
    }
    if !opts.unsafe_no_split && plan.sizes().iter().any(|&s| s == 0 || s == n) {
        return Err(Error::Fold("every fold needs records on both sides of the split".into()));
    }

    let outputs: Vec<FoldOutput> = if opts.unsafe_no_split {
        let all: Vec<usize> = (0..n).collect();
        vec![evaluate_fold(data, &all, &all, learners, opts, 0)?]
    } else {
        (0..plan.folds)
            .into_par_iter()
            .map(|j| {
                evaluate_fold(
                    data,
                    &plan.complement(j),
                    &plan.members(j),
                    learners,
                    opts,
                    j,
                )
            })
            .collect::<Result<Vec<_>>>()?
    };

    let mut phi = vec![vec![0.0; n * p]; k];
    let mut plug = vec![vec![0.0; n * p]; k];
    let mut clipping = ClippingCounts::default();
    for out in outputs {
        clipping.evaluations += out.clipping.evaluations;
        clipping.pi_clipped += out.clipping.pi_clipped;
        clipping.gamma_clipped += out.clipping.gamma_clipped;
        for (i, phi_rows, plug_rows) in out.rows {
            for z in 0..k {
                phi[z][i * p..(i + 1) * p].copy_from_slice(&phi_rows[z]);
                plug[z][i * p..(i + 1) * p].copy_from_slice(&plug_rows[z]);
            }
        }
    }

    let quantile = normal_quantile(opts.alpha);
    let influence: Vec<InfluenceMatrix> = phi
        .into_iter()
        .zip(&data.treatment_levels)
        .map(|(values, level)| InfluenceMatrix {
            level: level.clone(),
            p,
            values,
            fold: plan.assignment.clone(),
        })
        .collect();

    let levels: Vec<LevelEstimate> = influence
        .iter()
        .zip(&plug)
        .map(|(m, plug)| {
            let psi_hat = m.mean();
            let cov = covariance(&m.values, p);
            let (std_error, intervals) = wald(&psi_hat, &cov, n, quantile);
            LevelEstimate {
                level: m.level.clone(),
                psi_hat,
                std_error,
                covariance: cov,
                intervals,
                plugin: column_means(plug, p),
            }
        })
        .collect();

    let mut contrasts = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let diff: Vec<f64> = influence[b]
                .values
                .iter()
                .zip(&influence[a].values)
                .map(|(x, y)| x - y)
                .collect();
            let estimate: Vec<f64> = levels[b]
                .psi_hat
                .iter()
                .zip(&levels[a].psi_hat)
                .map(|(x, y)| x - y)
                .collect();
            let cov = covariance(&diff, p);
            let (std_error, intervals) = wald(&estimate, &cov, n, quantile);
            contrasts.push(ContrastEstimate {
                treated: levels[b].level.clone(),
                reference: levels[a].level.clone(),
                estimate,
                std_error,
                covariance: cov,
                intervals,
                plugin: levels[b]
                    .plugin
                    .iter()
                    .zip(&levels[a].plugin)
                    .map(|(x, y)| x - y)
                    .collect(),
            });
        }
    }

    let report = EstimateReport {
        n,
        folds: plan.folds,
        alpha: opts.alpha,
        quantile,
        learners: learners.spec.describe(),
        outcome_names: data.outcome_names.clone(),
        levels,
        contrasts,
        clipping,
        fold_sizes: plan.sizes(),
    };
    Ok(CrossFit {
        report,
        influence,
        plugin_rows: plug,
        plan,
    })
}

/// Uncorrected plug-in `P_n{beta_z(X) / gamma_z(X)}` per level, using the
/// same cross-fitted nuisances as the one-step estimator.
pub fn plugin_estimate(
    data: &Dataset,
    learners: &LearnerSet,
    opts: &CrossFitOptions,
) -> Result<Vec<Vec<f64>>> {
    let fit = crossfit_estimate(data, learners, opts)?;
    Ok(fit.report.levels.into_iter().map(|l| l.plugin).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_observed_record() {
        // gamma = 0.5, beta = 0.25, pi = 0.8, lambda = 0.5; R = 1, Z = z, Y = 1
        let phi = eif_from_values(&[1.0], true, Some(1), 1, 0.8, 0.5, &[0.25], 0.5);
        assert!((phi[0] - 1.625).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_missing_record() {
        let phi = eif_from_values(&[1.0], false, None, 1, 0.8, 0.5, &[0.25], 0.5);
        assert!((phi[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_returns_regression() {
        for (obs, z) in [(true, Some(0)), (true, Some(1)), (false, None)] {
            let phi = eif_from_values(&[0.5], obs, z, 1, 0.3, 0.7, &[0.2], 0.4);
            assert!((phi[0] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn fold_sizes() {
        assert_eq!(make_folds(10, 2, 1).unwrap().sizes(), vec![5, 5]);
        assert_eq!(make_folds(11, 2, 1).unwrap().sizes(), vec![6, 5]);
        assert_eq!(make_folds(11, 2, 9).unwrap(), make_folds(11, 2, 9).unwrap());
        assert!(matches!(make_folds(3, 2, 0), Err(Error::Fold(_))));
        assert!(make_folds(10, 1, 0).is_err());
    }
}
