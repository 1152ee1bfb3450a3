//! Synthetic designs with known truths.
//!
//! * `dag_a`: the missingness flag is drawn from the covariates and an
//!   independent latent before the outcome exists;
//! * `dag_b`: the flag depends on the covariates and the realized outcome;
//! * `discrete_reference`: binary covariate, exposure and outcome with
//!   `psi_1 = 0.6`, `psi_0 = 0.3`;
//! * `iv_reference`: binary instrument and treatment, monotone through a
//!   shared uniform, complier effect `0.5`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ObservedSample};
use crate::error::{Error, Result};
use crate::iv::late_identify;
use crate::learners::{LearnerKind, LearnerSet, LearnerSpec, TrueNuisances};
use crate::oracle_lab::{psi_true, sample_from, DiscreteLaw, LawOracle, NuisanceMask};
use crate::stats::{expit, logit, tilt_simplex};

/// Positivity margin every design must respect.
pub const DESIGN_EPS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousParams {
    #[serde(default = "default_d")]
    pub d: usize,
    /// `gamma_1(x) = expit(gamma_intercept + gamma_coef' x)`
    #[serde(default)]
    pub gamma_intercept: f64,
    #[serde(default = "default_gamma_coef")]
    pub gamma_coef: Vec<f64>,
    /// `Y = outcome_intercepts[z] + outcome_coef' x + noise_sd * N(0, 1)`
    #[serde(default = "default_outcome_intercepts")]
    pub outcome_intercepts: Vec<f64>,
    #[serde(default = "default_outcome_coef")]
    pub outcome_coef: Vec<f64>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_pi_intercept")]
    pub pi_intercept: f64,
    #[serde(default = "default_pi_coef")]
    pub pi_coef: Vec<f64>,
    /// Weight of the latent `U1` in the flag model of `dag_a`.
    #[serde(default = "default_pi_latent")]
    pub pi_latent: f64,
    /// Weight of `tanh(Y)` in the flag model of `dag_b`.
    #[serde(default = "default_pi_outcome")]
    pub pi_outcome: f64,
}

fn default_d() -> usize {
    2
}
fn default_gamma_coef() -> Vec<f64> {
    vec![0.8, -0.5]
}
fn default_outcome_intercepts() -> Vec<f64> {
    vec![0.3, 0.6]
}
fn default_outcome_coef() -> Vec<f64> {
    vec![0.5, 0.25]
}
fn default_noise_sd() -> f64 {
    1.0
}
fn default_pi_intercept() -> f64 {
    0.4
}
fn default_pi_coef() -> Vec<f64> {
    vec![0.5, -0.3]
}
fn default_pi_latent() -> f64 {
    0.6
}
fn default_pi_outcome() -> f64 {
    0.8
}

impl Default for ContinuousParams {
    fn default() -> Self {
        Self {
            d: default_d(),
            gamma_intercept: 0.0,
            gamma_coef: default_gamma_coef(),
            outcome_intercepts: default_outcome_intercepts(),
            outcome_coef: default_outcome_coef(),
            noise_sd: default_noise_sd(),
            pi_intercept: default_pi_intercept(),
            pi_coef: default_pi_coef(),
            pi_latent: default_pi_latent(),
            pi_outcome: default_pi_outcome(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvParams {
    /// `A^z = 1{U < take_base + first_stage z + take_covariate x}`
    #[serde(default = "default_take_base")]
    pub take_base: f64,
    #[serde(default = "default_first_stage")]
    pub first_stage: f64,
    #[serde(default = "default_take_covariate")]
    pub take_covariate: f64,
    /// `P(Y = 1 | A, X) = response_base + effect A + response_covariate X`
    #[serde(default = "default_response_base")]
    pub response_base: f64,
    #[serde(default = "default_effect")]
    pub effect: f64,
    #[serde(default = "default_response_covariate")]
    pub response_covariate: f64,
    /// Share of units with `A^0 = 1, A^1 = 0`. Nonzero values break
    /// monotonicity and exist only for robustness studies.
    #[serde(default)]
    pub defiers: f64,
}

fn default_take_base() -> f64 {
    0.2
}
fn default_first_stage() -> f64 {
    0.4
}
fn default_take_covariate() -> f64 {
    0.1
}
fn default_response_base() -> f64 {
    0.2
}
fn default_effect() -> f64 {
    0.5
}
fn default_response_covariate() -> f64 {
    0.2
}

impl Default for IvParams {
    fn default() -> Self {
        Self {
            take_base: default_take_base(),
            first_stage: default_first_stage(),
            take_covariate: default_take_covariate(),
            response_base: default_response_base(),
            effect: default_effect(),
            response_covariate: default_response_covariate(),
            defiers: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Family {
    DagA(ContinuousParams),
    DagB(ContinuousParams),
    IvReference(IvParams),
    DiscreteReference,
}

/// Deliberate misspecification of the estimation step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "knob", rename_all = "snake_case", deny_unknown_fields)]
pub enum Knob {
    #[default]
    None,
    /// `pi` fitted on the constant covariate.
    BiasPi,
    /// `lambda` fitted on the constant covariate.
    BiasLambda,
    /// `gamma` fitted on the constant covariate.
    BiasGamma,
    /// Oracle nuisances moved by `scale * n^-exponent`.
    SlowRate {
        exponent: f64,
        #[serde(default = "default_rate_scale")]
        scale: f64,
        /// Nuisances to perturb; all by default.
        #[serde(default)]
        nuisances: Option<NuisanceMask>,
    },
}

fn default_rate_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub family: Family,
    #[serde(default)]
    pub knob: Knob,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TruthSource {
    ClosedForm,
    Enumeration,
    MonteCarlo { se: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub levels: Vec<String>,
    /// `psi[z][coord]`
    pub psi: Vec<Vec<f64>>,
    pub late: Option<f64>,
    pub source: TruthSource,
}

impl GroundTruth {
    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }
}

fn binary_levels() -> Vec<String> {
    vec!["0".into(), "1".into()]
}

/// The finite law of the discrete reference design.
pub fn discrete_reference_law() -> Result<DiscreteLaw> {
    let mut gamma = Vec::new();
    let mut mu = Vec::new();
    let mut pi = Vec::new();
    for x in [0.0, 1.0] {
        let g1 = 0.3 + 0.4 * x;
        gamma.push(vec![1.0 - g1, g1]);
        mu.push(
            [0.0, 1.0]
                .iter()
                .map(|z| {
                    let q = 0.2 + 0.3 * z + 0.2 * x;
                    vec![1.0 - q, q]
                })
                .collect(),
        );
        pi.push([0.0, 1.0].iter().map(|y| 0.5 + 0.2 * x + 0.2 * y).collect());
    }
    DiscreteLaw::new(
        binary_levels(),
        vec![vec![0.0], vec![1.0]],
        vec![0.5, 0.5],
        vec![vec![0.0], vec![1.0]],
        gamma,
        mu,
        pi,
    )
}

impl IvParams {
    fn thresholds(&self, x: f64) -> (f64, f64) {
        let t0 = self.take_base + self.take_covariate * x;
        (t0, t0 + self.first_stage)
    }

    fn potential(&self, x: f64, u: f64) -> (bool, bool) {
        let (t0, t1) = self.thresholds(x);
        (u < t0 || u > 1.0 - self.defiers, u < t1)
    }

    fn response(&self, a: f64, x: f64) -> f64 {
        self.response_base + self.effect * a + self.response_covariate * x
    }

    fn check(&self) -> Result<()> {
        for x in [0.0, 1.0] {
            let (t0, t1) = self.thresholds(x);
            let in_unit = |v: f64| (0.0..=1.0).contains(&v);
            if !in_unit(t0) || !in_unit(t1) || !in_unit(t0 + self.defiers) {
                return Err(Error::Config("treatment thresholds outside [0, 1]".into()));
            }
            if !(0.0..=1.0).contains(&self.defiers) || t1 > 1.0 - self.defiers {
                return Err(Error::Config("defier share overlaps the take-up region".into()));
            }
            for a in [0.0, 1.0] {
                if !in_unit(self.response(a, x)) {
                    return Err(Error::Config("response probability outside [0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    /// `P(A^0 = i, A^1 = j | X = x)` indexed `[i][j]`, by integrating the
    /// shared uniform over the breakpoints.
    pub fn potential_table(&self, x: f64) -> [[f64; 2]; 2] {
        let (t0, t1) = self.thresholds(x);
        let mut cuts = vec![0.0, t0, t1, 1.0 - self.defiers, 1.0];
        cuts.iter_mut().for_each(|c| *c = f64::clamp(*c, 0.0, 1.0));
        cuts.sort_by(f64::total_cmp);
        let mut table = [[0.0; 2]; 2];
        for w in cuts.windows(2) {
            if w[1] > w[0] {
                let (a0, a1) = self.potential(x, 0.5 * (w[0] + w[1]));
                table[usize::from(a0)][usize::from(a1)] += w[1] - w[0];
            }
        }
        table
    }

    /// `P(A^1 >= A^0)`, averaged over the covariate.
    pub fn monotone_share(&self) -> f64 {
        [0.0, 1.0]
            .iter()
            .map(|&x| 0.5 * (1.0 - self.potential_table(x)[1][0]))
            .sum()
    }
}

fn iv_instrument_propensity(x: f64) -> f64 {
    0.3 + 0.4 * x
}

fn iv_flag_propensity(x: f64, a: f64, y: f64) -> f64 {
    0.5 + 0.2 * x + 0.1 * a + 0.1 * y
}

/// The finite law of the IV design; outcomes are `(A, Y)`.
pub fn iv_law(params: &IvParams) -> Result<DiscreteLaw> {
    params.check()?;
    let y_support: Vec<Vec<f64>> = vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
        vec![1.0, 1.0],
    ];
    let mut gamma = Vec::new();
    let mut mu = Vec::new();
    let mut pi = Vec::new();
    for x in [0.0, 1.0] {
        let g1 = iv_instrument_propensity(x);
        gamma.push(vec![1.0 - g1, g1]);
        let table = params.potential_table(x);
        let take = [table[1][0] + table[1][1], table[0][1] + table[1][1]];
        mu.push(
            take.iter()
                .map(|&pa| {
                    y_support
                        .iter()
                        .map(|v| {
                            let p_a = if v[0] == 1.0 { pa } else { 1.0 - pa };
                            let q = params.response(v[0], x);
                            p_a * if v[1] == 1.0 { q } else { 1.0 - q }
                        })
                        .collect()
                })
                .collect(),
        );
        pi.push(
            y_support
                .iter()
                .map(|v| iv_flag_propensity(x, v[0], v[1]))
                .collect(),
        );
    }
    DiscreteLaw::new(
        binary_levels(),
        vec![vec![0.0], vec![1.0]],
        vec![0.5, 0.5],
        y_support,
        gamma,
        mu,
        pi,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FlagModel {
    Latent,
    Outcome,
}

/// Closed-form nuisances of the continuous designs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTruth {
    params: ContinuousParams,
    flag: FlagModel,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

impl ContinuousTruth {
    fn new(params: &ContinuousParams, flag: FlagModel) -> Result<Self> {
        let d = params.d;
        if d == 0 {
            return Err(Error::Config("covariate dimension must be positive".into()));
        }
        if params.gamma_coef.len() != d || params.outcome_coef.len() != d || params.pi_coef.len() != d
        {
            return Err(Error::Config(format!("coefficient vectors must have length d = {d}")));
        }
        if params.outcome_intercepts.len() != 2 {
            return Err(Error::Config("need one outcome intercept per exposure level".into()));
        }
        if !(params.noise_sd > 0.0) {
            return Err(Error::Config("noise_sd must be positive".into()));
        }
        let truth = Self {
            params: params.clone(),
            flag,
        };
        truth.check_positivity()?;
        Ok(truth)
    }

    fn latent_pi(&self, lin: f64) -> f64 {
        let l = self.params.pi_latent;
        0.5 * (expit(lin + l) + expit(lin - l))
    }

    /// Both propensities are monotone in their linear index, so the extremes
    /// over the cube `[-1, 1]^d` bound them.
    fn check_positivity(&self) -> Result<()> {
        let p = &self.params;
        let l1 = |c: &[f64]| c.iter().map(|v| v.abs()).sum::<f64>();
        let g = (
            expit(p.gamma_intercept - l1(&p.gamma_coef)),
            expit(p.gamma_intercept + l1(&p.gamma_coef)),
        );
        let lo = p.pi_intercept - l1(&p.pi_coef);
        let hi = p.pi_intercept + l1(&p.pi_coef);
        let r = match self.flag {
            FlagModel::Latent => (self.latent_pi(lo), self.latent_pi(hi)),
            FlagModel::Outcome => (
                expit(lo - p.pi_outcome.abs()),
                expit(hi + p.pi_outcome.abs()),
            ),
        };
        for (what, (a, b)) in [("gamma", g), ("pi", r)] {
            if a < DESIGN_EPS || b > 1.0 - DESIGN_EPS {
                return Err(Error::Config(format!(
                    "{what} ranges over [{a:.4}, {b:.4}], outside [{DESIGN_EPS}, {}]",
                    1.0 - DESIGN_EPS
                )));
            }
        }
        Ok(())
    }

    fn mean(&self, x: &[f64], z: usize) -> f64 {
        self.params.outcome_intercepts[z] + dot(&self.params.outcome_coef, x)
    }

    fn pi_index(&self, x: &[f64]) -> f64 {
        self.params.pi_intercept + dot(&self.params.pi_coef, x)
    }

    fn psi(&self) -> Vec<Vec<f64>> {
        // E(X) = 0 under the uniform covariate law.
        self.params
            .outcome_intercepts
            .iter()
            .map(|a| vec![*a])
            .collect()
    }

    fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cube = Uniform::new_inclusive(-1.0, 1.0);
        let noise = Normal::new(0.0, self.params.noise_sd).expect("positive sd");
        let samples = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..self.params.d).map(|_| cube.sample(&mut rng)).collect();
                let z = usize::from(rng.gen::<f64>() < self.gamma(&x)[1]);
                // dag_a decides the flag before the outcome is drawn.
                let early = (self.flag == FlagModel::Latent).then(|| {
                    let u1 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    rng.gen::<f64>() < expit(self.pi_index(&x) + self.params.pi_latent * u1)
                });
                let y = self.mean(&x, z) + noise.sample(&mut rng);
                let r = early.unwrap_or_else(|| rng.gen::<f64>() < self.pi(&x, &[y]));
                ObservedSample::new(x, r.then_some(z), vec![y])
            })
            .collect();
        Dataset::with_default_names(samples, binary_levels())
    }
}

impl TrueNuisances for ContinuousTruth {
    fn levels(&self) -> usize {
        2
    }

    fn covariate_dim(&self) -> usize {
        self.params.d
    }

    fn pi(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.flag {
            FlagModel::Latent => self.latent_pi(self.pi_index(x)),
            FlagModel::Outcome => expit(self.pi_index(x) + self.params.pi_outcome * y[0].tanh()),
        }
    }

    fn lambda(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let g = self.gamma(x);
        let s2 = self.params.noise_sd * self.params.noise_sd;
        let logw: Vec<f64> = (0..2)
            .map(|z| g[z].ln() - (y[0] - self.mean(x, z)).powi(2) / (2.0 * s2))
            .collect();
        let m = logw[0].max(logw[1]);
        let w: Vec<f64> = logw.iter().map(|v| (v - m).exp()).collect();
        let t = w[0] + w[1];
        vec![w[0] / t, w[1] / t]
    }

    fn beta(&self, x: &[f64], z: usize) -> Vec<f64> {
        vec![self.gamma(x)[z] * self.mean(x, z)]
    }

    fn gamma(&self, x: &[f64]) -> Vec<f64> {
        let g1 = expit(self.params.gamma_intercept + dot(&self.params.gamma_coef, x));
        vec![1.0 - g1, g1]
    }
}

/// Largest spread over `z` of `P(R = 1 | X, Y, Z)` in a binary-outcome,
/// sign-covariate version of a DAG design, by enumerating the structural
/// equations including the latent of `dag_a`.
pub fn structural_missingness_spread(family: &Family) -> Result<f64> {
    let (params, flag) = match family {
        Family::DagA(p) => (p, FlagModel::Latent),
        Family::DagB(p) => (p, FlagModel::Outcome),
        _ => return Err(Error::Config("only the DAG designs have a structural flag model".into())),
    };
    let truth = ContinuousTruth::new(params, flag)?;
    let d = params.d;
    if d > 3 {
        return Err(Error::Config("enumeration supports d <= 3".into()));
    }
    let mut spread: f64 = 0.0;
    for code in 0..(1usize << d) {
        let x: Vec<f64> = (0..d)
            .map(|j| if code >> j & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let px = 1.0 / (1usize << d) as f64;
        for y in [0.0, 1.0] {
            let mut cond = Vec::new();
            for z in 0..2 {
                let gz = truth.gamma(&x)[z];
                let q = expit(truth.mean(&x, z));
                let py = if y == 1.0 { q } else { 1.0 - q };
                let (mut with_flag, mut total) = (0.0, 0.0);
                for u in [-1.0, 1.0] {
                    let pr = match flag {
                        FlagModel::Latent => expit(truth.pi_index(&x) + params.pi_latent * u),
                        FlagModel::Outcome => truth.pi(&x, &[y]),
                    };
                    let joint = px * gz * 0.5 * py;
                    with_flag += joint * pr;
                    total += joint;
                }
                cond.push(with_flag / total);
            }
            spread = spread.max((cond[0] - cond[1]).abs());
        }
    }
    Ok(spread)
}

/// The exact nuisance functions of a design.
pub fn true_nuisances(family: &Family) -> Result<Arc<dyn TrueNuisances>> {
    Ok(match family {
        Family::DagA(p) => Arc::new(ContinuousTruth::new(p, FlagModel::Latent)?),
        Family::DagB(p) => Arc::new(ContinuousTruth::new(p, FlagModel::Outcome)?),
        Family::IvReference(p) => Arc::new(LawOracle::new(iv_law(p)?)?),
        Family::DiscreteReference => Arc::new(LawOracle::new(discrete_reference_law()?)?),
    })
}

fn enumerated_truth(law: &DiscreteLaw, late: bool) -> Result<GroundTruth> {
    let psi = (0..law.k())
        .map(|z| psi_true(law, z))
        .collect::<Result<Vec<_>>>()?;
    let late = if late { late_identify(law).ok() } else { None };
    Ok(GroundTruth {
        levels: law.level_labels.clone(),
        psi,
        late,
        source: TruthSource::Enumeration,
    })
}

pub fn ground_truth(family: &Family) -> Result<GroundTruth> {
    match family {
        Family::DagA(p) | Family::DagB(p) => {
            let flag = if matches!(family, Family::DagA(_)) {
                FlagModel::Latent
            } else {
                FlagModel::Outcome
            };
            Ok(GroundTruth {
                levels: binary_levels(),
                psi: ContinuousTruth::new(p, flag)?.psi(),
                late: None,
                source: TruthSource::ClosedForm,
            })
        }
        Family::IvReference(p) => enumerated_truth(&iv_law(p)?, true),
        Family::DiscreteReference => enumerated_truth(&discrete_reference_law()?, false),
    }
}

/// Draws `n` records from a design.
pub fn sample(family: &Family, n: usize, seed: u64) -> Result<Dataset> {
    Ok(match family {
        Family::DagA(p) => ContinuousTruth::new(p, FlagModel::Latent)?.sample(n, seed),
        Family::DagB(p) => ContinuousTruth::new(p, FlagModel::Outcome)?.sample(n, seed),
        Family::IvReference(p) => {
            let mut data = sample_iv(p, n, seed)?;
            data.covariate_names = vec!["x".into()];
            data.outcome_names = vec!["a".into(), "y".into()];
            data
        }
        Family::DiscreteReference => sample_from(&discrete_reference_law()?, n, seed),
    })
}

/// Structural draw of the IV design: one uniform drives both potential
/// treatments.
fn sample_iv(params: &IvParams, n: usize, seed: u64) -> Result<Dataset> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x = if rng.gen::<bool>() { 1.0 } else { 0.0 };
            let z = usize::from(rng.gen::<f64>() < iv_instrument_propensity(x));
            let (a0, a1) = params.potential(x, rng.gen());
            let a = if [a0, a1][z] { 1.0 } else { 0.0 };
            let y = if rng.gen::<f64>() < params.response(a, x) { 1.0 } else { 0.0 };
            let r = rng.gen::<f64>() < iv_flag_propensity(x, a, y);
            ObservedSample::new(vec![x], r.then_some(z), vec![a, y])
        })
        .collect();
    Ok(Dataset::with_default_names(samples, binary_levels()))
}

pub fn generate(spec: &DgpSpec) -> Result<(Dataset, GroundTruth)> {
    Ok((
        sample(&spec.family, spec.n, spec.seed)?,
        ground_truth(&spec.family)?,
    ))
}

/// Exponents of the injected error per nuisance; `None` or infinity leaves
/// that nuisance exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub pi: Option<f64>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub scale: f64,
}

impl RateSpec {
    pub fn uniform(exponent: f64, scale: f64, mask: NuisanceMask) -> Self {
        let on = |b: bool| b.then_some(exponent);
        Self {
            pi: on(mask.pi),
            lambda: on(mask.lambda),
            beta: on(mask.beta),
            gamma: on(mask.gamma),
            scale,
        }
    }
}

/// Truth plus a deterministic error of size `scale * n^-r` in each nuisance.
pub struct InjectedNuisances {
    inner: Arc<dyn TrueNuisances>,
    pi: f64,
    lambda: f64,
    beta: f64,
    gamma: f64,
}

impl InjectedNuisances {
    /// Perturbation sizes `(pi, lambda, beta, gamma)`.
    pub fn sizes(&self) -> [f64; 4] {
        [self.pi, self.lambda, self.beta, self.gamma]
    }
}

fn last_level_shift(k: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[k - 1] = s;
    v
}

impl TrueNuisances for InjectedNuisances {
    fn levels(&self) -> usize {
        self.inner.levels()
    }

    fn covariate_dim(&self) -> usize {
        self.inner.covariate_dim()
    }

    fn pi(&self, x: &[f64], y: &[f64]) -> f64 {
        expit(logit(self.inner.pi(x, y)) + self.pi)
    }

    fn lambda(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let l = self.inner.lambda(x, y);
        tilt_simplex(&l, &last_level_shift(l.len(), self.lambda))
    }

    fn beta(&self, x: &[f64], z: usize) -> Vec<f64> {
        let g = self.inner.gamma(x)[z];
        self.inner
            .beta(x, z)
            .into_iter()
            .map(|b| b + self.beta * g)
            .collect()
    }

    fn gamma(&self, x: &[f64]) -> Vec<f64> {
        let g = self.inner.gamma(x);
        tilt_simplex(&g, &last_level_shift(g.len(), -self.gamma))
    }
}

pub fn inject_rate(truth: Arc<dyn TrueNuisances>, n: usize, rates: &RateSpec) -> InjectedNuisances {
    let size = |r: Option<f64>| r.map_or(0.0, |r| rates.scale * (n as f64).powf(-r));
    InjectedNuisances {
        inner: truth,
        pi: size(rates.pi),
        lambda: size(rates.lambda),
        beta: size(rates.beta),
        gamma: size(rates.gamma),
    }
}

/// Learners for estimating on data from `spec`, with the knob applied to
/// `base`. The design's truth is attached for any oracle learner.
pub fn knob_learners(spec: &DgpSpec, base: &LearnerSpec) -> Result<LearnerSet> {
    let truth = true_nuisances(&spec.family)?;
    let mut learners = base.clone();
    match &spec.knob {
        Knob::None => Ok(LearnerSet::with_truth(learners, truth)),
        Knob::BiasPi => {
            learners.pi = Some(LearnerKind::Constant);
            Ok(LearnerSet::with_truth(learners, truth))
        }
        Knob::BiasLambda => {
            learners.lambda = Some(LearnerKind::Constant);
            Ok(LearnerSet::with_truth(learners, truth))
        }
        Knob::BiasGamma => {
            learners.gamma = Some(LearnerKind::Constant);
            Ok(LearnerSet::with_truth(learners, truth))
        }
        Knob::SlowRate {
            exponent,
            scale,
            nuisances,
        } => {
            if !(*exponent >= 0.0) {
                return Err(Error::Config(format!("rate exponent must be >= 0, got {exponent}")));
            }
            let mask = nuisances.unwrap_or(NuisanceMask::ALL);
            for (on, slot) in [
                (mask.pi, &mut learners.pi),
                (mask.lambda, &mut learners.lambda),
                (mask.beta, &mut learners.beta),
                (mask.gamma, &mut learners.gamma),
            ] {
                if on {
                    *slot = Some(LearnerKind::Oracle);
                }
            }
            let injected = inject_rate(truth, spec.n, &RateSpec::uniform(*exponent, *scale, mask));
            Ok(LearnerSet::with_truth(learners, Arc::new(injected)))
        }
    }
}
