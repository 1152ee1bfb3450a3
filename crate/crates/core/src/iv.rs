//! Complier effect with a binary instrument that is missing at random.
//!
//! The outcome vector is `(A, Y)`: coordinate 0 is the binary treatment and
//! coordinate 1 the response. The instrument levels are the dataset's two
//! treatment levels; the second level in the catalog plays `z = 1`.
//! Instrument independence, exclusion, relevance and monotonicity cannot be
//! checked from the observed data and are assumed.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{crossfit_estimate, CrossFit, CrossFitOptions, InfluenceMatrix, Interval};
use crate::learners::LearnerSet;
use crate::oracle_lab::{psi_true, DiscreteLaw};
use crate::stats::{covariance, mean, normal_quantile, std_dev};

/// Treatment coordinate of the outcome vector.
pub const TREATMENT: usize = 0;
/// Response coordinate of the outcome vector.
pub const RESPONSE: usize = 1;

/// Default guard on `|P_n(phi_1^a - phi_0^a)|`.
pub const DEFAULT_DELTA: f64 = 0.01;

/// First-stage `|estimate| / se` below this is flagged as weak.
const WEAK_T: f64 = 3.1622776601683795;

/// A dataset shaped for the ratio estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset(Dataset);

impl IvDataset {
    pub fn new(data: Dataset) -> Result<Self> {
        data.ensure_valid()?;
        if data.k() != 2 {
            return Err(Error::Validation(format!(
                "instrument must have 2 levels, found {}",
                data.k()
            )));
        }
        if data.outcome_dim() != 2 {
            return Err(Error::Validation(format!(
                "expected outcomes (A, Y), found {} columns",
                data.outcome_dim()
            )));
        }
        if let Some(i) = data
            .samples
            .iter()
            .position(|o| o.outcomes[TREATMENT] != 0.0 && o.outcomes[TREATMENT] != 1.0)
        {
            return Err(Error::Validation(format!(
                "treatment must be 0 or 1 (record {i} has {})",
                data.samples[i].outcomes[TREATMENT]
            )));
        }
        Ok(Self(data))
    }

    pub fn dataset(&self) -> &Dataset {
        &self.0
    }

    pub fn into_inner(self) -> Dataset {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateReport {
    pub theta_hat: f64,
    pub std_error: f64,
    pub interval: Interval,
    pub alpha: f64,
    pub quantile: f64,
    /// `P_n(phi_1^y - phi_0^y)`
    pub numerator: f64,
    /// `P_n(phi_1^a - phi_0^a)`
    pub denominator: f64,
    pub denominator_se: f64,
    pub weak_instrument: bool,
    pub n: usize,
}

/// `(numerator rows, denominator rows)` of the contrast between the two
/// instrument levels.
fn contrast_rows(phi0: &InfluenceMatrix, phi1: &InfluenceMatrix) -> (Vec<f64>, Vec<f64>) {
    (0..phi0.n())
        .map(|i| {
            let (a, b) = (phi0.row(i), phi1.row(i));
            (b[RESPONSE] - a[RESPONSE], b[TREATMENT] - a[TREATMENT])
        })
        .unzip()
}

/// Ratio estimate and its standard error from per-record influence values
/// of both instrument levels.
pub fn late_from_influence(
    phi0: &InfluenceMatrix,
    phi1: &InfluenceMatrix,
    alpha: f64,
    delta: f64,
) -> Result<LateReport> {
    if phi0.p != 2 || phi1.p != 2 || phi0.n() != phi1.n() {
        return Err(Error::Validation("influence rows must be (A, Y) pairs".into()));
    }
    let n = phi0.n();
    let (num, den) = contrast_rows(phi0, phi1);
    let numerator = mean(&num);
    let denominator = mean(&den);
    if !(denominator.abs() >= delta) {
        return Err(Error::WeakInstrument { denominator, delta });
    }
    let theta_hat = numerator / denominator;
    let combo: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(u, d)| u - theta_hat * d)
        .collect();
    let std_error = std_dev(&combo) / denominator.abs() / (n as f64).sqrt();
    let denominator_se = std_dev(&den) / (n as f64).sqrt();
    let quantile = normal_quantile(alpha);
    Ok(LateReport {
        theta_hat,
        std_error,
        interval: Interval {
            lower: theta_hat - quantile * std_error,
            upper: theta_hat + quantile * std_error,
        },
        alpha,
        quantile,
        numerator,
        denominator,
        denominator_se,
        weak_instrument: denominator.abs() < WEAK_T * denominator_se,
        n,
    })
}

/// Delta-method standard error of the ratio from the joint rows
/// `(phi_0^a, phi_0^y, phi_1^a, phi_1^y)`.
pub fn delta_method_se(phi0: &InfluenceMatrix, phi1: &InfluenceMatrix) -> f64 {
    let n = phi0.n();
    let mut joint = Vec::with_capacity(4 * n);
    for i in 0..n {
        joint.extend_from_slice(phi0.row(i));
        joint.extend_from_slice(phi1.row(i));
    }
    let m0 = phi0.mean();
    let m1 = phi1.mean();
    let den = m1[TREATMENT] - m0[TREATMENT];
    let theta = (m1[RESPONSE] - m0[RESPONSE]) / den;
    let grad = [theta / den, -1.0 / den, -theta / den, 1.0 / den];
    let cov = covariance(&joint, 4);
    let mut var = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            var += grad[a] * cov[a][b] * grad[b];
        }
    }
    (var.max(0.0) / n as f64).sqrt()
}

/// One cross-fit on the bivariate outcome followed by the ratio.
pub fn late_estimate(
    data: &IvDataset,
    learners: &LearnerSet,
    opts: &CrossFitOptions,
    delta: f64,
) -> Result<(LateReport, CrossFit)> {
    if !(delta >= 0.0) {
        return Err(Error::Config(format!("delta must be nonnegative, got {delta}")));
    }
    let fit = crossfit_estimate(data.dataset(), learners, opts)?;
    let report = late_from_influence(&fit.influence[0], &fit.influence[1], opts.alpha, delta)?;
    Ok((report, fit))
}

/// The complier effect of a finite law by enumeration.
pub fn late_identify(law: &DiscreteLaw) -> Result<f64> {
    if law.k() != 2 || law.p() != 2 {
        return Err(Error::InvalidLaw("need a binary instrument and outcomes (A, Y)".into()));
    }
    let psi0 = psi_true(law, 0)?;
    let psi1 = psi_true(law, 1)?;
    let den = psi1[TREATMENT] - psi0[TREATMENT];
    if den.abs() < 1e-12 {
        return Err(Error::NoCompliers);
    }
    Ok((psi1[RESPONSE] - psi0[RESPONSE]) / den)
}
