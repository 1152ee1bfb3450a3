//! Run configuration: a JSON file with every key optional, then command-line
//! overrides on top. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use mexp_core::estimator::CrossFitOptions;
use mexp_core::learners::{LearnerKind, LearnerSpec};
use mexp_core::simgen::{Family, Knob};
use mexp_core::simulation::{EstimatorKind, SimConfig, Target};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Which CSV columns play which part. Missing entries are inferred from the
/// header by [`Roles::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub exposure: Option<String>,
    #[serde(default)]
    pub outcomes: Option<Vec<String>>,
    /// Column holding `R`; when present it must agree with exposure emptiness.
    #[serde(default)]
    pub missing_flag: Option<String>,
    /// Ordered level catalog. Inferred from the observed labels when absent.
    #[serde(default)]
    pub levels: Option<Vec<String>>,
}

/// Fully resolved column roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub covariates: Vec<String>,
    pub exposure: String,
    pub outcomes: Vec<String>,
    pub missing_flag: Option<String>,
    pub levels: Option<Vec<String>>,
}

impl Roles {
    /// Fills unset roles from the header: exposure `z`, flag `r` if present,
    /// covariates `x*`, outcomes `y*` (or `default_outcomes` when given).
    pub fn resolve(&self, header: &[String], default_outcomes: Option<&[&str]>) -> CliResult<ColumnRoles> {
        let has = |name: &str| header.iter().any(|h| h == name);
        let exposure = self.exposure.clone().unwrap_or_else(|| "z".to_owned());
        let missing_flag = match &self.missing_flag {
            Some(f) => Some(f.clone()),
            None => has("r").then(|| "r".to_owned()),
        };
        let covariates = self.covariates.clone().unwrap_or_else(|| {
            header.iter().filter(|h| h.starts_with('x')).cloned().collect()
        });
        let outcomes = match (&self.outcomes, default_outcomes) {
            (Some(o), _) => o.clone(),
            (None, Some(d)) => d.iter().map(|s| s.to_string()).collect(),
            (None, None) => header.iter().filter(|h| h.starts_with('y')).cloned().collect(),
        };
        let roles = ColumnRoles {
            covariates,
            exposure,
            outcomes,
            missing_flag,
            levels: self.levels.clone(),
        };
        for name in roles.all_columns() {
            if !has(name) {
                return Err(CliError::Config(format!("column `{name}` is not in the CSV header")));
            }
        }
        if roles.outcomes.is_empty() {
            return Err(CliError::Config("no outcome columns".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in roles.all_columns() {
            if !seen.insert(name) {
                return Err(CliError::Config(format!("column `{name}` is assigned more than one role")));
            }
        }
        Ok(roles)
    }
}

impl ColumnRoles {
    pub fn all_columns(&self) -> impl Iterator<Item = &str> {
        self.covariates
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.exposure.as_str()))
            .chain(self.outcomes.iter().map(String::as_str))
            .chain(self.missing_flag.as_deref())
    }
}

/// Settings for the `simulate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_design")]
    pub design: Family,
    #[serde(default)]
    pub knob: Knob,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_targets")]
    pub targets: Vec<Target>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            design: default_design(),
            knob: Knob::None,
            n_grid: default_n_grid(),
            reps: default_reps(),
            targets: default_targets(),
            estimators: default_estimators(),
        }
    }
}

/// Settings for the `check-expansion` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default = "default_laws")]
    pub laws: usize,
    /// Perturbation size for the expansion identity.
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            laws: default_laws(),
            t: default_t(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub roles: Roles,
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
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub unsafe_no_split: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Per-replicate CSV for `simulate`; defaults to `out` with a `.csv` extension.
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub check: CheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all keys have defaults")
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
    mexp_core::iv::DEFAULT_DELTA
}
fn default_design() -> Family {
    Family::DiscreteReference
}
fn default_n_grid() -> Vec<usize> {
    vec![500, 1000, 2000]
}
fn default_reps() -> usize {
    200
}
fn default_targets() -> Vec<Target> {
    vec!["psi:1".parse().expect("valid target")]
}
fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::OneStep]
}
fn default_laws() -> usize {
    50
}
fn default_t() -> f64 {
    0.1
}
fn default_tolerance() -> f64 {
    1e-10
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub k: Option<usize>,
    pub eps: Option<f64>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub reps: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub learner: Option<String>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_path(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> CliResult<()> {
        if let Some(v) = &o.input {
            self.input = Some(v.clone());
        }
        if let Some(v) = o.k {
            self.folds = v;
        }
        if let Some(v) = o.eps {
            self.eps = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.delta {
            self.delta = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = &o.table {
            self.table = Some(v.clone());
        }
        if let Some(v) = o.reps {
            self.simulation.reps = v;
        }
        if let Some(v) = &o.n_grid {
            self.simulation.n_grid = v.clone();
        }
        if let Some(name) = &o.learner {
            self.learners = LearnerSpec::uniform(LearnerKind::from_name(name)?);
        }
        Ok(())
    }

    pub fn check(&self) -> CliResult<()> {
        self.crossfit_options().check()?;
        if self.folds < 2 && !self.unsafe_no_split {
            return Err(CliError::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(CliError::Config(format!("delta must be a finite non-negative number, got {}", self.delta)));
        }
        if self.check.laws == 0 || !(self.check.t > 0.0) || !(self.check.tolerance > 0.0) {
            return Err(CliError::Config("check needs laws > 0, t > 0 and tolerance > 0".into()));
        }
        Ok(())
    }

    pub fn crossfit_options(&self) -> CrossFitOptions {
        CrossFitOptions {
            folds: self.folds,
            seed: self.seed,
            eps: self.eps,
            alpha: self.alpha,
            unsafe_no_split: self.unsafe_no_split,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        let mut cfg = SimConfig::new(s.design.clone(), s.n_grid.clone(), s.reps, self.seed);
        cfg.knob = s.knob.clone();
        cfg.learners = self.learners.clone();
        cfg.folds = self.folds;
        cfg.eps = self.eps;
        cfg.alpha = self.alpha;
        cfg.delta = self.delta;
        cfg.targets = s.targets.clone();
        cfg.estimators = s.estimators.clone();
        cfg
    }

    pub fn table_path(&self) -> Option<PathBuf> {
        self.table
            .clone()
            .or_else(|| self.out.as_ref().map(|p| p.with_extension("csv")))
    }
}
