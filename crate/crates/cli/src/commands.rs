//! The subcommands. Each returns the JSON text of its report; writing is
//! left to the caller so that all output comes from one place.

use std::io::Write;
use std::path::Path;

use mexp_core::data::{summarize, validate, Dataset, DatasetSummary};
use mexp_core::estimator::{crossfit_estimate, EstimateReport, FoldPlan};
use mexp_core::iv::{late_estimate, IvDataset, LateReport};
use mexp_core::learners::LearnerSet;
use mexp_core::oracle_lab::{
    derive_nuisances, double_robustness_check, eif_mean_zero_check, psi_direct, psi_of, random_law,
    vonmises_identity_check, LawPerturbation, LawShape, NuisanceMask, Perturbation, PerturbedLaw,
};
use mexp_core::simgen::{sample, Family, GroundTruth};
use mexp_core::simulation::{run_simulation, SimRow, SimSummary};
use mexp_core::stats::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ColumnRoles, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{read_csv, write_csv};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Common wrapper of every JSON report.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: &'a RunConfig,
    pub report: T,
}

fn render<T: Serialize>(command: &'static str, cfg: &RunConfig, report: T) -> String {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        tool: TOOL,
        tool_version: TOOL_VERSION,
        command,
        seed: cfg.seed,
        config: cfg,
        report,
    };
    let mut s = serde_json::to_string_pretty(&env).expect("reports serialize");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
pub struct DataSection {
    pub roles: ColumnRoles,
    pub summary: DatasetSummary,
    pub warnings: Vec<String>,
}

fn load_data(cfg: &RunConfig, default_outcomes: Option<&[&str]>) -> CliResult<(Dataset, DataSection)> {
    let path = cfg
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("no input CSV (set `input` or pass --input)".into()))?;
    let (data, roles) = read_csv(path, &cfg.roles, default_outcomes)?;
    let report = validate(&data);
    let warnings = report.warnings.clone();
    report.into_result()?;
    let summary = summarize(&data)?;
    Ok((
        data,
        DataSection {
            roles,
            summary,
            warnings,
        },
    ))
}

#[derive(Debug, Serialize)]
pub struct EstimateOutput {
    pub data: DataSection,
    pub estimate: EstimateReport,
    pub fold_plan: FoldPlan,
}

pub fn run_estimate(cfg: &RunConfig) -> CliResult<String> {
    let (data, section) = load_data(cfg, None)?;
    let fit = crossfit_estimate(&data, &LearnerSet::new(cfg.learners.clone()), &cfg.crossfit_options())?;
    Ok(render(
        "estimate",
        cfg,
        EstimateOutput {
            data: section,
            estimate: fit.report,
            fold_plan: fit.plan,
        },
    ))
}

#[derive(Debug, Serialize)]
pub struct IvOutput {
    pub data: DataSection,
    pub late: LateReport,
    pub levels: EstimateReport,
    pub fold_plan: FoldPlan,
}

/// Outcome columns used when none are configured: treatment then response.
pub const IV_OUTCOMES: [&str; 2] = ["a", "y"];

/// Runs the complier analysis. A weak first stage that passes the guard is
/// flagged in the report and returned as the second element.
pub fn run_iv(cfg: &RunConfig) -> CliResult<(String, bool)> {
    let (data, section) = load_data(cfg, Some(&IV_OUTCOMES))?;
    let iv = IvDataset::new(data)?;
    let (late, fit) = late_estimate(
        &iv,
        &LearnerSet::new(cfg.learners.clone()),
        &cfg.crossfit_options(),
        cfg.delta,
    )?;
    let weak = late.weak_instrument;
    let out = IvOutput {
        data: section,
        late,
        levels: fit.report,
        fold_plan: fit.plan,
    };
    Ok((render("iv", cfg, out), weak))
}

#[derive(Debug, Serialize)]
pub struct SimulateOutput {
    pub truth: GroundTruth,
    pub summaries: Vec<SimSummary>,
    pub rows: usize,
    pub failures: usize,
}

/// Returns the JSON report and the per-replicate rows.
pub fn run_simulate(cfg: &RunConfig) -> CliResult<(String, Vec<SimRow>)> {
    let sim = cfg.sim_config();
    sim.check()?;
    let res = run_simulation(&sim)?;
    let out = SimulateOutput {
        truth: res.truth,
        failures: res.rows.iter().filter(|r| r.error.is_some()).count(),
        rows: res.rows.len(),
        summaries: res.summaries,
    };
    Ok((render("simulate", cfg, out), res.rows))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Flat per-replicate table; `covered` is 1/0, empty when the replicate failed.
pub fn write_rows<W: Write>(rows: &[SimRow], writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record([
        "n", "replicate", "estimator", "target", "estimate", "std_error", "lower", "upper", "truth", "covered",
        "error",
    ])
    .map_err(err)?;
    for r in rows {
        let estimator = serde_json::to_value(r.estimator).expect("serializes");
        w.write_record([
            r.n.to_string(),
            r.replicate.to_string(),
            estimator.as_str().unwrap_or_default().to_owned(),
            r.target.to_string(),
            opt(r.estimate),
            opt(r.std_error),
            opt(r.lower),
            opt(r.upper),
            r.truth.to_string(),
            r.covered.map_or(String::new(), |c| u8::from(c).to_string()),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct LawCheck {
    pub law: usize,
    pub nx: usize,
    pub d: usize,
    pub k: usize,
    pub ny: usize,
    pub p: usize,
    pub identification: f64,
    pub mean_zero: f64,
    pub expansion_tables: f64,
    pub expansion_law: f64,
    pub double_robustness: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub name: &'static str,
    pub max_residual: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct CheckOutput {
    pub tolerance: f64,
    pub passed: bool,
    pub checks: Vec<CheckSummary>,
    pub laws: Vec<LawCheck>,
}

fn check_law(i: usize, seed: u64, t: f64) -> CliResult<LawCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
    let shape = LawShape {
        nx: rng.gen_range(1..=8),
        d: rng.gen_range(1..=2),
        k: rng.gen_range(2..=3),
        ny: rng.gen_range(2..=8),
        p: rng.gen_range(1..=2),
        ..LawShape::default()
    };
    let law = random_law(&mut rng, shape)?;
    let tables = derive_nuisances(&law)?;
    let free = PerturbedLaw::free(&law, &Perturbation::random(&law, NuisanceMask::ALL, &mut rng), t)?;
    let coherent = PerturbedLaw::coherent(&law, &LawPerturbation::random(&law, &mut rng), t)?;
    // gamma exact and either pi or lambda exact; everything else moves
    let robust: Vec<PerturbedLaw> = [
        NuisanceMask {
            pi: false,
            lambda: true,
            beta: true,
            gamma: false,
        },
        NuisanceMask {
            pi: true,
            lambda: false,
            beta: true,
            gamma: false,
        },
    ]
    .into_iter()
    .map(|m| PerturbedLaw::free(&law, &Perturbation::random(&law, m, &mut rng), t))
    .collect::<mexp_core::Result<_>>()?;

    let mut row = LawCheck {
        law: i,
        nx: law.nx(),
        d: law.d(),
        k: law.k(),
        ny: law.ny(),
        p: law.p(),
        identification: 0.0,
        mean_zero: 0.0,
        expansion_tables: 0.0,
        expansion_law: 0.0,
        double_robustness: 0.0,
    };
    for z in 0..law.k() {
        let gap = psi_of(&law.px, &tables, z)
            .iter()
            .zip(psi_direct(&law, z))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        row.identification = row.identification.max(gap);
        row.mean_zero = row.mean_zero.max(eif_mean_zero_check(&law, z)?);
        row.expansion_tables = row.expansion_tables.max(vonmises_identity_check(&free, z).residual);
        row.expansion_law = row.expansion_law.max(vonmises_identity_check(&coherent, z).residual);
        for pb in &robust {
            let r = double_robustness_check(pb, z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            row.double_robustness = row.double_robustness.max(r);
        }
    }
    Ok(row)
}

/// Enumeration checks on randomized finite laws. The report is produced
/// even when a check fails; the flag tells the caller which.
pub fn run_check(cfg: &RunConfig) -> CliResult<(String, bool)> {
    let c = &cfg.check;
    let laws = (0..c.laws)
        .into_par_iter()
        .map(|i| check_law(i, cfg.seed, c.t))
        .collect::<CliResult<Vec<_>>>()?;
    let max = |f: fn(&LawCheck) -> f64| laws.iter().map(f).fold(0.0, f64::max);
    let checks: Vec<CheckSummary> = [
        ("identification", max(|l| l.identification)),
        ("mean_zero", max(|l| l.mean_zero)),
        ("expansion_tables", max(|l| l.expansion_tables)),
        ("expansion_law", max(|l| l.expansion_law)),
        ("double_robustness", max(|l| l.double_robustness)),
    ]
    .into_iter()
    .map(|(name, max_residual)| CheckSummary {
        name,
        max_residual,
        passed: max_residual < c.tolerance,
    })
    .collect();
    let passed = checks.iter().all(|c| c.passed);
    let out = CheckOutput {
        tolerance: c.tolerance,
        passed,
        checks,
        laws,
    };
    Ok((render("check-expansion", cfg, out), passed))
}

/// Draws `n` records from the configured design and writes them as CSV.
pub fn run_generate(cfg: &RunConfig, design: &Family, n: usize, path: Option<&Path>) -> CliResult<()> {
    let data = sample(design, n, cfg.seed)?;
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| CliError::io(p, e))?;
            write_csv(&data, std::io::BufWriter::new(file))
        }
        None => write_csv(&data, std::io::stdout().lock()),
    }
}
