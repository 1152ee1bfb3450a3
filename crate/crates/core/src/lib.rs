//! One-step estimation of counterfactual means and local average treatment
//! effects when the exposure (or instrument) is missing at random given
//! covariates and outcomes.
//!
//! Modules:
//! * [`data`]: records, datasets and structural validation;
//! * [`learners`] and [`nuisance`]: fitting `pi`, `lambda_z`, `beta_z`, `gamma_z`;
//! * [`estimator`]: influence-function evaluation and cross-fitting;
//! * [`iv`]: ratio estimator of the complier effect;
//! * [`oracle_lab`]: exact enumeration over finite-support laws;
//! * [`simgen`] and [`simulation`]: synthetic designs and replicate studies.

pub mod data;
pub mod error;
pub mod estimator;
pub mod iv;
pub mod learners;
pub mod nuisance;
pub mod oracle_lab;
pub mod simgen;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
