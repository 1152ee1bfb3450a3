//! Replicate studies over a design and a grid of sample sizes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{crossfit_estimate, CrossFit, CrossFitOptions};
use crate::iv::{late_from_influence, IvDataset, DEFAULT_DELTA, RESPONSE, TREATMENT};
use crate::learners::{LearnerKind, LearnerSpec};
use crate::simgen::{ground_truth, knob_learners, sample, DgpSpec, Family, GroundTruth, Knob};
use crate::stats::{derive_seed, mean, std_dev};

/// A scalar estimand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Target {
    /// `psi:<level>` or `psi:<level>:<coord>`
    Psi { level: String, coord: usize },
    /// `ate:<treated>-<reference>` or with `:<coord>`
    Contrast {
        treated: String,
        reference: String,
        coord: usize,
    },
    /// `late`
    Late,
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse target `{s}` (try psi:1, ate:1-0 or late)"));
        if s == "late" {
            return Ok(Self::Late);
        }
        let mut parts = s.split(':');
        let head = parts.next().ok_or_else(bad)?;
        let body = parts.next().ok_or_else(bad)?;
        let coord = match parts.next() {
            Some(c) => c.parse().map_err(|_| bad())?,
            None => 0,
        };
        if parts.next().is_some() || body.is_empty() {
            return Err(bad());
        }
        match head {
            "psi" => Ok(Self::Psi {
                level: body.into(),
                coord,
            }),
            "ate" => {
                let (t, r) = body.split_once('-').ok_or_else(bad)?;
                if t.is_empty() || r.is_empty() {
                    return Err(bad());
                }
                Ok(Self::Contrast {
                    treated: t.into(),
                    reference: r.into(),
                    coord,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = |c: usize| if c == 0 { String::new() } else { format!(":{c}") };
        match self {
            Self::Psi { level, coord } => write!(f, "psi:{level}{}", suffix(*coord)),
            Self::Contrast {
                treated,
                reference,
                coord,
            } => write!(f, "ate:{treated}-{reference}{}", suffix(*coord)),
            Self::Late => f.write_str("late"),
        }
    }
}

impl TryFrom<String> for Target {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Target> for String {
    fn from(t: Target) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[serde(rename = "onestep")]
    OneStep,
    Plugin,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OneStep => "onestep",
            Self::Plugin => "plugin",
        })
    }
}

fn default_learners() -> LearnerSpec {
    LearnerSpec::uniform(LearnerKind::kernel())
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
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_targets() -> Vec<Target> {
    vec![Target::Psi {
        level: "1".into(),
        coord: 0,
    }]
}
fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::OneStep]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub design: Family,
    #[serde(default)]
    pub knob: Knob,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_learners")]
    pub learners: LearnerSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_targets")]
    pub targets: Vec<Target>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
}

impl SimConfig {
    pub fn new(design: Family, n_grid: Vec<usize>, reps: usize, seed: u64) -> Self {
        Self {
            design,
            knob: Knob::None,
            n_grid,
            reps,
            seed,
            learners: default_learners(),
            folds: default_folds(),
            eps: default_eps(),
            alpha: default_alpha(),
            delta: default_delta(),
            targets: default_targets(),
            estimators: default_estimators(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.reps == 0 {
            return Err(Error::Config("need a non-empty n grid and at least one replicate".into()));
        }
        if self.targets.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("need at least one target and one estimator".into()));
        }
        self.crossfit_options(0).check()
    }

    fn crossfit_options(&self, seed: u64) -> CrossFitOptions {
        CrossFitOptions {
            folds: self.folds,
            seed,
            eps: self.eps,
            alpha: self.alpha,
            unsafe_no_split: false,
        }
    }
}

/// One estimate of one target in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub n: usize,
    pub replicate: usize,
    pub estimator: EstimatorKind,
    pub target: Target,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub truth: f64,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub n: usize,
    pub estimator: EstimatorKind,
    pub target: Target,
    pub replicates: usize,
    pub failures: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub mean_std_error: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub truth: GroundTruth,
    pub rows: Vec<SimRow>,
    pub summaries: Vec<SimSummary>,
}

fn target_truth(target: &Target, truth: &GroundTruth) -> Result<f64> {
    let psi = |label: &str, coord: usize| -> Result<f64> {
        let z = truth
            .level_index(label)
            .ok_or_else(|| Error::Config(format!("target names unknown level `{label}`")))?;
        truth.psi[z]
            .get(coord)
            .copied()
            .ok_or_else(|| Error::Config(format!("target coordinate {coord} out of range")))
    };
    match target {
        Target::Psi { level, coord } => psi(level, *coord),
        Target::Contrast {
            treated,
            reference,
            coord,
        } => Ok(psi(treated, *coord)? - psi(reference, *coord)?),
        Target::Late => truth
            .late
            .ok_or_else(|| Error::Config("late target needs an instrument design".into())),
    }
}

/// `(estimate, se, (lower, upper))`; the plug-in has no interval.
type Point = (f64, Option<f64>, Option<(f64, f64)>);

fn evaluate_target(
    fit: &CrossFit,
    target: &Target,
    estimator: EstimatorKind,
    cfg: &SimConfig,
) -> Result<Point> {
    let report = &fit.report;
    let missing = |what: String| Error::Config(format!("no estimate for {what}"));
    match (target, estimator) {
        (Target::Psi { level, coord }, est) => {
            let l = report.level(level).ok_or_else(|| missing(target.to_string()))?;
            match est {
                EstimatorKind::OneStep => Ok((
                    l.psi_hat[*coord],
                    Some(l.std_error[*coord]),
                    Some((l.intervals[*coord].lower, l.intervals[*coord].upper)),
                )),
                EstimatorKind::Plugin => Ok((l.plugin[*coord], None, None)),
            }
        }
        (
            Target::Contrast {
                treated,
                reference,
                coord,
            },
            est,
        ) => {
            let c = report.contrast(treated, reference);
            let flipped = report.contrast(reference, treated);
            let (c, sign) = match (c, flipped) {
                (Some(c), _) => (c, 1.0),
                (None, Some(c)) => (c, -1.0),
                _ => return Err(missing(target.to_string())),
            };
            match est {
                EstimatorKind::OneStep => {
                    let e = sign * c.estimate[*coord];
                    let se = c.std_error[*coord];
                    let q = report.quantile;
                    Ok((e, Some(se), Some((e - q * se, e + q * se))))
                }
                EstimatorKind::Plugin => Ok((sign * c.plugin[*coord], None, None)),
            }
        }
        (Target::Late, EstimatorKind::OneStep) => {
            let r = late_from_influence(&fit.influence[0], &fit.influence[1], cfg.alpha, cfg.delta)?;
            Ok((
                r.theta_hat,
                Some(r.std_error),
                Some((r.interval.lower, r.interval.upper)),
            ))
        }
        (Target::Late, EstimatorKind::Plugin) => {
            let (p0, p1) = (&report.levels[0].plugin, &report.levels[1].plugin);
            let den = p1[TREATMENT] - p0[TREATMENT];
            if !(den.abs() >= cfg.delta) {
                return Err(Error::WeakInstrument {
                    denominator: den,
                    delta: cfg.delta,
                });
            }
            Ok(((p1[RESPONSE] - p0[RESPONSE]) / den, None, None))
        }
    }
}

fn run_replicate(
    cfg: &SimConfig,
    truths: &[f64],
    n_index: usize,
    n: usize,
    replicate: usize,
) -> Vec<SimRow> {
    let spec = DgpSpec {
        family: cfg.design.clone(),
        knob: cfg.knob.clone(),
        n,
        seed: derive_seed(cfg.seed, &[n_index as u64, replicate as u64, 0]),
    };
    let fit = (|| -> Result<CrossFit> {
        let data = sample(&spec.family, n, spec.seed)?;
        let learners = knob_learners(&spec, &cfg.learners)?;
        let opts = cfg.crossfit_options(derive_seed(cfg.seed, &[n_index as u64, replicate as u64, 1]));
        if cfg.targets.contains(&Target::Late) {
            IvDataset::new(data.clone())?;
        }
        crossfit_estimate(&data, &learners, &opts)
    })();
    let mut rows = Vec::with_capacity(cfg.targets.len() * cfg.estimators.len());
    for (target, &truth) in cfg.targets.iter().zip(truths) {
        for &estimator in &cfg.estimators {
            let point = fit
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|f| evaluate_target(f, target, estimator, cfg).map_err(|e| e.to_string()));
            let row = match point {
                Ok((estimate, se, ci)) => SimRow {
                    n,
                    replicate,
                    estimator,
                    target: target.clone(),
                    estimate: Some(estimate),
                    std_error: se,
                    lower: ci.map(|c| c.0),
                    upper: ci.map(|c| c.1),
                    truth,
                    covered: ci.map(|(lo, hi)| lo <= truth && truth <= hi),
                    error: None,
                },
                Err(message) => SimRow {
                    n,
                    replicate,
                    estimator,
                    target: target.clone(),
                    estimate: None,
                    std_error: None,
                    lower: None,
                    upper: None,
                    truth,
                    covered: None,
                    error: Some(message),
                },
            };
            rows.push(row);
        }
    }
    rows
}

/// Summaries per `(n, estimator, target)` in grid order.
pub fn summarize_rows(rows: &[SimRow], cfg: &SimConfig) -> Vec<SimSummary> {
    let mut out = Vec::new();
    for &n in &cfg.n_grid {
        for &estimator in &cfg.estimators {
            for target in &cfg.targets {
                let cell: Vec<&SimRow> = rows
                    .iter()
                    .filter(|r| r.n == n && r.estimator == estimator && &r.target == target)
                    .collect();
                let Some(first) = cell.first() else { continue };
                let truth = first.truth;
                let est: Vec<f64> = cell.iter().filter_map(|r| r.estimate).collect();
                let ses: Vec<f64> = cell.iter().filter_map(|r| r.std_error).collect();
                let cov: Vec<bool> = cell.iter().filter_map(|r| r.covered).collect();
                let mean_estimate = if est.is_empty() { f64::NAN } else { mean(&est) };
                let mse = if est.is_empty() {
                    f64::NAN
                } else {
                    est.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / est.len() as f64
                };
                out.push(SimSummary {
                    n,
                    estimator,
                    target: target.clone(),
                    replicates: cell.len(),
                    failures: cell.len() - est.len(),
                    truth,
                    mean_estimate,
                    bias: mean_estimate - truth,
                    sd: if est.len() > 1 { std_dev(&est) } else { f64::NAN },
                    rmse: mse.sqrt(),
                    mean_std_error: (!ses.is_empty()).then(|| mean(&ses)),
                    coverage: (!cov.is_empty())
                        .then(|| cov.iter().filter(|c| **c).count() as f64 / cov.len() as f64),
                });
            }
        }
    }
    out
}

/// Runs every `(n, replicate)` cell in parallel; rows come back in grid
/// order regardless of scheduling.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimResult> {
    cfg.check()?;
    let truth = ground_truth(&cfg.design)?;
    let truths = cfg
        .targets
        .iter()
        .map(|t| target_truth(t, &truth))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, usize)> = cfg
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..cfg.reps).map(move |r| (i, n, r)))
        .collect();
    let rows: Vec<SimRow> = jobs
        .par_iter()
        .map(|&(i, n, r)| run_replicate(cfg, &truths, i, n, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summaries = summarize_rows(&rows, cfg);
    Ok(SimResult {
        truth,
        rows,
        summaries,
    })
}
