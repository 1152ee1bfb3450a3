//! Fitting and evaluation of the four nuisance functions.
//!
//! * `pi(x, y) = P(R = 1 | X = x, Y = y)`, the missingness propensity;
//! * `lambda_z(x, y) = P(Z = z | X = x, Y = y, R = 1)`, fit on complete cases;
//! * `gamma_z(x) = E{lambda_z(X, Y) | X = x}` and
//!   `beta_z(x) = E{Y lambda_z(X, Y) | X = x}`, fit by regressing the
//!   first-stage pseudo-outcomes on covariates over all records.
//!
//! Probabilities are clipped when evaluated: `pi` to `[eps, 1 - eps]`, each
//! `lambda_z` floored at `eps / k` then renormalized, and `gamma` projected
//! onto the simplex with every coordinate in `[eps, 1 - eps]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{
    FeatureMatrix, LearnerKind, LearnerSet, Link, OracleTarget, ProbabilisticClassifier,
    Regressor,
};

fn first_stage_inputs(data: &Dataset, observed_only: bool) -> FeatureMatrix {
    let cols = data.covariate_dim() + data.outcome_dim();
    let mut buf = Vec::new();
    let mut rows = 0;
    for s in &data.samples {
        if observed_only && !s.observed {
            continue;
        }
        buf.extend_from_slice(&s.covariates);
        buf.extend_from_slice(&s.outcomes);
        rows += 1;
    }
    FeatureMatrix::new(rows, cols, buf)
}

fn covariate_inputs(data: &Dataset) -> FeatureMatrix {
    let mut buf = Vec::with_capacity(data.n() * data.covariate_dim());
    for s in &data.samples {
        buf.extend_from_slice(&s.covariates);
    }
    FeatureMatrix::new(data.n(), data.covariate_dim(), buf)
}

fn join(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + y.len());
    v.extend_from_slice(x);
    v.extend_from_slice(y);
    v
}

/// Fitted missingness propensity.
pub struct PiHat {
    model: Option<Box<dyn ProbabilisticClassifier>>,
    constant: f64,
    epsilon: f64,
}

impl PiHat {
    /// Clipped value and whether clipping was applied.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> (f64, bool) {
        let raw = match &self.model {
            Some(m) => m.predict_proba(&join(x, y))[1],
            None => self.constant,
        };
        let clipped = raw.clamp(self.epsilon, 1.0 - self.epsilon);
        (clipped, clipped != raw)
    }
}

/// Fitted complete-case exposure probabilities.
pub struct LambdaHat {
    model: Box<dyn ProbabilisticClassifier>,
    levels: usize,
    epsilon: f64,
}

impl LambdaHat {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let raw = self.model.predict_proba(&join(x, y));
        floor_and_renormalize(&raw, self.epsilon / self.levels as f64)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }
}

/// Second-stage regressions: `beta[z][coord]` and `gamma[z]`.
pub struct SecondStage {
    beta: Vec<Vec<Box<dyn Regressor>>>,
    gamma: Vec<Box<dyn Regressor>>,
    epsilon: f64,
}

impl SecondStage {
    pub fn beta(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.beta
            .iter()
            .map(|coords| coords.iter().map(|r| r.predict(x)).collect())
            .collect()
    }

    /// Bounded-simplex gamma and the number of levels whose raw value fell
    /// outside `[eps, 1 - eps]`.
    pub fn gamma(&self, x: &[f64]) -> (Vec<f64>, usize) {
        let raw: Vec<f64> = self.gamma.iter().map(|r| r.predict(x)).collect();
        let lo = self.epsilon;
        let hi = 1.0 - self.epsilon;
        let clipped = raw.iter().filter(|v| !(lo..=hi).contains(*v)).count();
        (bounded_simplex(&raw, lo, hi), clipped)
    }
}

/// Floors every entry at `floor` and rescales to sum to one.
pub fn floor_and_renormalize(raw: &[f64], floor: f64) -> Vec<f64> {
    let floored: Vec<f64> = raw
        .iter()
        .map(|v| if v.is_finite() { v.max(floor) } else { floor })
        .collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// Closest-in-ratio point of `{v : sum v = 1, lo <= v_i <= hi}`: finds the
/// scale `s` with `sum clamp(s * v_i, lo, hi) = 1` by bisection.
pub fn bounded_simplex(raw: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let k = raw.len();
    let total: f64 = raw.iter().sum();
    if raw.iter().all(|v| (lo..=hi).contains(v)) && (total - 1.0).abs() <= 1e-15 {
        return raw.to_vec();
    }
    let v: Vec<f64> = raw
        .iter()
        .map(|r| if r.is_finite() { r.max(0.0) } else { 0.0 })
        .collect();
    if v.iter().all(|r| *r == 0.0) {
        return vec![1.0 / k as f64; k];
    }
    let mass = |s: f64| v.iter().map(|r| (s * r).clamp(lo, hi)).sum::<f64>();
    let (mut a, mut b) = (0.0, 1.0);
    while mass(b) < 1.0 {
        b *= 2.0;
        if b > 1e300 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mass(mid) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|r| (b * r).clamp(lo, hi)).collect();
    let resid = 1.0 - out.iter().sum::<f64>();
    if let Some(free) = out.iter().position(|o| *o > lo && *o < hi) {
        out[free] += resid;
    }
    out
}

pub fn fit_pi(train: &Dataset, learner: &LearnerSet, eps: f64) -> Result<PiHat> {
    let labels: Vec<usize> = train.samples.iter().map(|s| usize::from(s.observed)).collect();
    let observed = labels.iter().sum::<usize>();
    if observed == 0 || observed == labels.len() {
        if learner.spec.degenerate_fallback && !labels.is_empty() {
            return Ok(PiHat {
                model: None,
                constant: observed as f64 / labels.len() as f64,
                epsilon: eps,
            });
        }
        return Err(Error::DegenerateFit {
            stage: "pi",
            fold: None,
            message: format!(
                "missingness flag is constant ({observed} of {} observed)",
                labels.len()
            ),
        });
    }
    let mut model = learner.classifier(learner.spec.pi_kind(), OracleTarget::Pi)?;
    model.fit(&first_stage_inputs(train, false), &labels, 2)?;
    Ok(PiHat {
        model: Some(model),
        constant: 0.0,
        epsilon: eps,
    })
}

pub fn fit_lambda(train: &Dataset, learner: &LearnerSet, eps: f64) -> Result<LambdaHat> {
    let k = train.k();
    let labels: Vec<usize> = train.samples.iter().filter_map(|s| s.exposure).collect();
    let mut counts = vec![0usize; k];
    for &z in &labels {
        counts[z] += 1;
    }
    if let Some(z) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateFit {
            stage: "lambda",
            fold: None,
            message: format!(
                "level {} has no observed exposure in the training data",
                train.treatment_levels[z]
            ),
        });
    }
    let mut model = learner.classifier(learner.spec.lambda_kind(), OracleTarget::Lambda)?;
    model.fit(&first_stage_inputs(train, true), &labels, k)?;
    Ok(LambdaHat {
        model,
        levels: k,
        epsilon: eps,
    })
}

fn link_for(kind: &LearnerKind, bounded: bool) -> Link {
    match kind {
        LearnerKind::Logistic { .. } if bounded => Link::Logit,
        _ => Link::Identity,
    }
}

pub fn fit_second_stage(
    train: &Dataset,
    lambda_hat: &LambdaHat,
    learner: &LearnerSet,
    eps: f64,
) -> Result<SecondStage> {
    let k = lambda_hat.levels();
    let p = train.outcome_dim();
    let pseudo: Vec<Vec<f64>> = train
        .samples
        .iter()
        .map(|s| lambda_hat.eval(&s.covariates, &s.outcomes))
        .collect();
    if pseudo.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("second-stage pseudo-outcomes".into()));
    }
    let inputs = covariate_inputs(train);
    let gamma_kind = learner.spec.gamma_kind();
    let beta_kind = learner.spec.beta_kind();
    let mut gamma = Vec::with_capacity(k);
    let mut beta = Vec::with_capacity(k);
    for z in 0..k {
        let targets: Vec<f64> = pseudo.iter().map(|l| l[z]).collect();
        let mut g = learner.regressor(
            gamma_kind,
            OracleTarget::Gamma { level: z },
            link_for(gamma_kind, true),
        )?;
        g.fit(&inputs, &targets, None)?;
        gamma.push(g);

        let mut coords = Vec::with_capacity(p);
        for j in 0..p {
            let targets: Vec<f64> = train
                .samples
                .iter()
                .zip(&pseudo)
                .map(|(s, l)| s.outcomes[j] * l[z])
                .collect();
            if targets.iter().any(|t| !t.is_finite()) {
                return Err(Error::NonFinite("second-stage pseudo-outcomes".into()));
            }
            let mut b = learner.regressor(
                beta_kind,
                OracleTarget::Beta { level: z, coord: j },
                link_for(beta_kind, false),
            )?;
            b.fit(&inputs, &targets, None)?;
            coords.push(b);
        }
        beta.push(coords);
    }
    Ok(SecondStage {
        beta,
        gamma,
        epsilon: eps,
    })
}

/// Where a nuisance model came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub fold: Option<usize>,
    pub learners: String,
}

/// All nuisances fitted on one training set.
pub struct NuisanceModel {
    pub pi: PiHat,
    pub lambda: LambdaHat,
    pub second_stage: SecondStage,
    pub epsilon: f64,
    pub provenance: Provenance,
}

/// Nuisance values at one `(x, y)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    pub pi: f64,
    pub lambda: Vec<f64>,
    /// `beta[z]` is a p-vector.
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub pi_clipped: bool,
    pub gamma_clipped: usize,
}

impl NuisanceModel {
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> NuisanceValues {
        let (pi, pi_clipped) = self.pi.eval(x, y);
        let (gamma, gamma_clipped) = self.second_stage.gamma(x);
        NuisanceValues {
            pi,
            lambda: self.lambda.eval(x, y),
            beta: self.second_stage.beta(x),
            gamma,
            pi_clipped,
            gamma_clipped,
        }
    }

    pub fn levels(&self) -> usize {
        self.lambda.levels()
    }
}

/// Fits every nuisance on `train`. With `nested_split`, the first stage uses
/// one half of the (seed-shuffled) training set and the second stage the other.
pub fn fit_all(
    train: &Dataset,
    learner: &LearnerSet,
    eps: f64,
    seed: u64,
    fold: Option<usize>,
) -> Result<NuisanceModel> {
    let tag = |e: Error| match fold {
        Some(j) => e.in_fold(j),
        None => e,
    };
    let (first, second) = if learner.spec.nested_split {
        let mut idx: Vec<usize> = (0..train.n()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let half = idx.len() / 2;
        (train.subset(&idx[..half]), train.subset(&idx[half..]))
    } else {
        (train.clone(), train.clone())
    };
    let pi = fit_pi(&first, learner, eps).map_err(tag)?;
    let lambda = fit_lambda(&first, learner, eps).map_err(tag)?;
    let second_stage = fit_second_stage(&second, &lambda, learner, eps).map_err(tag)?;
    Ok(NuisanceModel {
        pi,
        lambda,
        second_stage,
        epsilon: eps,
        provenance: Provenance {
            fold,
            learners: learner.spec.describe(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservedSample;
    use crate::learners::{Basis, LearnerSpec};

    fn levels() -> Vec<String> {
        vec!["0".into(), "1".into()]
    }

    #[test]
    fn bounded_simplex_respects_bounds() {
        let out = bounded_simplex(&[0.99, 0.0, 0.0], 0.01, 0.99);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|v| *v >= 0.01 - 1e-15 && *v <= 0.99 + 1e-15), "{out:?}");
        let out = bounded_simplex(&[0.3, 0.3], 0.01, 0.99);
        assert!((out[0] - 0.5).abs() < 1e-12);
        let out = bounded_simplex(&[-0.2, 1.3], 0.1, 0.9);
        assert_eq!(out.len(), 2);
        assert!((out[0] - 0.1).abs() < 1e-12 && (out[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn floor_renormalize_separated_class() {
        let out = floor_and_renormalize(&[1.0, 0.0], 0.005);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[1] > 0.0);
    }

    #[test]
    fn pi_clipping_contract() {
        // Learner output near one is clipped to 1 - eps.
        let mut samples = Vec::new();
        for i in 0..200 {
            let z = if i == 0 { None } else { Some(i % 2) };
            samples.push(ObservedSample::new(vec![0.0], z, vec![1.0]));
        }
        let ds = Dataset::with_default_names(samples, levels());
        let set = LearnerSet::new(LearnerSpec::uniform(LearnerKind::Constant));
        let pi = fit_pi(&ds, &set, 0.1).unwrap();
        assert_eq!(pi.eval(&[0.0], &[1.0]), (0.9, true));
    }

    #[test]
    fn degenerate_missingness_errors_without_fallback() {
        let samples = (0..10)
            .map(|i| ObservedSample::new(vec![i as f64], Some(i % 2), vec![0.0]))
            .collect();
        let ds = Dataset::with_default_names(samples, levels());
        let mut set = LearnerSet::new(LearnerSpec::uniform(LearnerKind::logistic(Basis::Raw)));
        assert!(matches!(
            fit_pi(&ds, &set, 0.01),
            Err(Error::DegenerateFit { stage: "pi", .. })
        ));
        set.spec.degenerate_fallback = true;
        let pi = fit_pi(&ds, &set, 0.01).unwrap();
        assert_eq!(pi.eval(&[0.0], &[0.0]).0, 0.99);
    }

    #[test]
    fn lambda_requires_every_level() {
        let samples = (0..10)
            .map(|i| ObservedSample::new(vec![i as f64], Some(0), vec![0.0]))
            .collect();
        let ds = Dataset::with_default_names(samples, levels());
        let set = LearnerSet::new(LearnerSpec::uniform(LearnerKind::kernel()));
        assert!(fit_lambda(&ds, &set, 0.01).is_err());
    }

    #[test]
    fn constant_lambda_gives_constant_second_stage() {
        // lambda_hat is constant (class frequencies), so gamma_hat equals it
        // and beta_hat = c * E(Y | X).
        let mut samples = Vec::new();
        for i in 0..400 {
            let x = (i % 4) as f64;
            let z = if i % 5 == 0 { None } else { Some(usize::from(i % 3 == 0)) };
            samples.push(ObservedSample::new(vec![x], z, vec![2.0 * x + 1.0]));
        }
        let ds = Dataset::with_default_names(samples, levels());
        let spec = LearnerSpec {
            lambda: Some(LearnerKind::Constant),
            ..LearnerSpec::uniform(LearnerKind::Kernel {
                bandwidth_scale: 1.0,
                bandwidth: Some(vec![0.05]),
            })
        };
        let set = LearnerSet::new(spec);
        let lambda = fit_lambda(&ds, &set, 0.01).unwrap();
        let c = lambda.eval(&[0.0], &[0.0]);
        let second = fit_second_stage(&ds, &lambda, &set, 0.01).unwrap();
        for x in [0.0, 1.0, 2.0, 3.0] {
            let (g, _) = second.gamma(&[x]);
            let b = second.beta(&[x]);
            for z in 0..2 {
                assert!((g[z] - c[z]).abs() < 1e-9);
                assert!((b[z][0] - c[z] * (2.0 * x + 1.0)).abs() < 1e-6, "{x} {b:?}");
            }
            assert!((g[0] + g[1] - 1.0).abs() < 1e-10);
        }
    }
}
