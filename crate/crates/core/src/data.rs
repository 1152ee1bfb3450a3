//! Observed-data records and structural validation.
//!
//! A record is `O = (X, R, R*Z, Y)`: covariates, a flag saying whether the
//! exposure was recorded, the exposure itself when it was, and the outcome
//! vector. Exposures are stored as indices into the dataset's ordered level
//! catalog; a missing exposure is `None`, never a numeric code.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fewer observed records than this for a level triggers a warning.
pub const LOW_LEVEL_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSample {
    pub covariates: Vec<f64>,
    /// `R`: whether the exposure was recorded.
    pub observed: bool,
    /// Index into `Dataset::treatment_levels`; present iff `observed`.
    pub exposure: Option<usize>,
    pub outcomes: Vec<f64>,
}

impl ObservedSample {
    /// Builds a record whose flag agrees with the exposure by construction.
    pub fn new(covariates: Vec<f64>, exposure: Option<usize>, outcomes: Vec<f64>) -> Self {
        Self {
            covariates,
            observed: exposure.is_some(),
            exposure,
            outcomes,
        }
    }

    /// Concatenation `(x, y)` used as the input of the first-stage nuisances.
    pub fn joint_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.covariates.len() + self.outcomes.len());
        v.extend_from_slice(&self.covariates);
        v.extend_from_slice(&self.outcomes);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<ObservedSample>,
    pub treatment_levels: Vec<String>,
    pub covariate_names: Vec<String>,
    pub outcome_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        samples: Vec<ObservedSample>,
        treatment_levels: Vec<String>,
        covariate_names: Vec<String>,
        outcome_names: Vec<String>,
    ) -> Self {
        Self {
            samples,
            treatment_levels,
            covariate_names,
            outcome_names,
        }
    }

    /// Dataset with generated column names `x1..xd`, `y1..yp`.
    pub fn with_default_names(samples: Vec<ObservedSample>, treatment_levels: Vec<String>) -> Self {
        let d = samples.first().map_or(0, |s| s.covariates.len());
        let p = samples.first().map_or(0, |s| s.outcomes.len());
        Self::new(
            samples,
            treatment_levels,
            (1..=d).map(|j| format!("x{j}")).collect(),
            (1..=p).map(|j| format!("y{j}")).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn k(&self) -> usize {
        self.treatment_levels.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcome_names.len()
    }

    /// Subset in the order given by `indices`.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            treatment_levels: self.treatment_levels.clone(),
            covariate_names: self.covariate_names.clone(),
            outcome_names: self.outcome_names.clone(),
        }
    }

    /// Validates and converts a failing report into an error.
    pub fn ensure_valid(&self) -> Result<()> {
        validate(self).into_result()
    }
}

/// Ordered level catalog inferred from observed labels (lexicographic).
pub fn infer_levels<'a, I>(labels: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    labels
        .into_iter()
        .map(str::to_owned)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityConfig {
    pub epsilon: f64,
}

impl PositivityConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::Config(format!(
                "positivity epsilon must lie in (0, 0.5), got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }
}

impl Default for PositivityConfig {
    fn default() -> Self {
        Self { epsilon: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msg = self
            .failures()
            .map(|c| format!("{} ({})", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::Validation(msg))
    }
}

fn push(checks: &mut Vec<Check>, name: &str, bad: usize, what: &str) {
    checks.push(Check {
        name: name.to_owned(),
        passed: bad == 0,
        detail: if bad == 0 {
            "ok".to_owned()
        } else {
            format!("{bad} {what}")
        },
    });
}

/// Runs every structural check and reports all outcomes at once.
///
/// Details report counts rather than record positions, so the report does
/// not depend on record order.
pub fn validate(dataset: &Dataset) -> ValidationReport {
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    let d = dataset.covariate_dim();
    let p = dataset.outcome_dim();
    let k = dataset.k();

    push(
        &mut checks,
        "non_empty",
        usize::from(dataset.samples.is_empty()),
        "dataset has no records",
    );

    let distinct: BTreeSet<&String> = dataset.treatment_levels.iter().collect();
    let catalog_bad = usize::from(k < 2) + usize::from(distinct.len() != k);
    push(
        &mut checks,
        "level_catalog",
        catalog_bad,
        "problem(s): need at least two distinct treatment levels",
    );

    let dims_bad = dataset
        .samples
        .iter()
        .filter(|s| s.covariates.len() != d || s.outcomes.len() != p)
        .count();
    push(
        &mut checks,
        "dimensions",
        dims_bad,
        "record(s) with covariate/outcome length differing from the header",
    );

    let flag_bad = dataset
        .samples
        .iter()
        .filter(|s| s.observed != s.exposure.is_some())
        .count();
    push(
        &mut checks,
        "exposure_presence",
        flag_bad,
        "record(s) whose exposure presence disagrees with the missingness flag",
    );

    let catalog_miss = dataset
        .samples
        .iter()
        .filter(|s| matches!(s.exposure, Some(z) if z >= k))
        .count();
    push(
        &mut checks,
        "exposure_in_catalog",
        catalog_miss,
        "record(s) with exposure outside the level catalog",
    );

    let nonfinite = dataset
        .samples
        .iter()
        .filter(|s| {
            s.covariates
                .iter()
                .chain(&s.outcomes)
                .any(|v| !v.is_finite())
        })
        .count();
    push(
        &mut checks,
        "finite_values",
        nonfinite,
        "record(s) containing non-finite covariates or outcomes",
    );

    let observed = dataset.samples.iter().filter(|s| s.observed).count();
    push(
        &mut checks,
        "observed_exposures",
        usize::from(observed == 0),
        "no record has an observed exposure",
    );

    let counts = level_counts(dataset);
    let absent: Vec<&str> = counts
        .iter()
        .zip(&dataset.treatment_levels)
        .filter(|(c, _)| **c == 0)
        .map(|(_, l)| l.as_str())
        .collect();
    checks.push(Check {
        name: "level_coverage".to_owned(),
        passed: absent.is_empty(),
        detail: if absent.is_empty() {
            "ok".to_owned()
        } else {
            format!("level(s) never observed: {}", absent.join(", "))
        },
    });
    for (c, l) in counts.iter().zip(&dataset.treatment_levels) {
        if *c > 0 && *c < LOW_LEVEL_COUNT {
            warnings.push(format!("level {l} observed only {c} time(s)"));
        }
    }

    ValidationReport { checks, warnings }
}

fn level_counts(dataset: &Dataset) -> Vec<usize> {
    let mut counts = vec![0usize; dataset.k()];
    for s in &dataset.samples {
        if let Some(z) = s.exposure {
            if z < counts.len() {
                counts[z] += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub k: usize,
    pub missingness_rate: f64,
    pub level_counts: Vec<usize>,
    /// Frequencies among records with an observed exposure.
    pub level_frequencies: Vec<f64>,
}

pub fn summarize(dataset: &Dataset) -> Result<DatasetSummary> {
    if dataset.samples.is_empty() {
        return Err(Error::Validation("non_empty (dataset has no records)".into()));
    }
    let n = dataset.n();
    let missing = dataset.samples.iter().filter(|s| !s.observed).count();
    let counts = level_counts(dataset);
    let observed: usize = counts.iter().sum();
    let freqs = counts
        .iter()
        .map(|&c| {
            if observed == 0 {
                0.0
            } else {
                c as f64 / observed as f64
            }
        })
        .collect();
    Ok(DatasetSummary {
        n,
        d: dataset.covariate_dim(),
        p: dataset.outcome_dim(),
        k: dataset.k(),
        missingness_rate: missing as f64 / n as f64,
        level_counts: counts,
        level_frequencies: freqs,
    })
}
