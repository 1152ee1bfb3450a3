//! CSV input and output of observed-data records.
//!
//! An empty exposure cell is the only missing-value marker: it means the
//! exposure was not recorded. Every other cell must parse as a finite number.

use std::io::{Read, Write};
use std::path::Path;

use mexp_core::data::{infer_levels, Dataset, ObservedSample};

use crate::config::{ColumnRoles, Roles};
use crate::error::{CliError, CliResult};

const MAX_REPORTED: usize = 10;

struct Problems {
    list: Vec<String>,
    total: usize,
}

impl Problems {
    fn new() -> Self {
        Self {
            list: Vec::new(),
            total: 0,
        }
    }

    fn push(&mut self, line: u64, column: &str, msg: String) {
        self.total += 1;
        if self.list.len() < MAX_REPORTED {
            self.list.push(format!("line {line}, column `{column}`: {msg}"));
        }
    }

    fn into_result(self) -> CliResult<()> {
        if self.total == 0 {
            return Ok(());
        }
        let more = self.total - self.list.len();
        let mut msg = self.list.join("; ");
        if more > 0 {
            msg.push_str(&format!("; and {more} more"));
        }
        Err(CliError::Input(msg))
    }
}

fn parse_number(cell: &str) -> Result<f64, String> {
    if cell.is_empty() {
        return Err("empty cell".into());
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("`{cell}` is not finite")),
        Err(_) => Err(format!("`{cell}` is not a number")),
    }
}

fn parse_flag(cell: &str) -> Result<bool, String> {
    match cell {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(format!("`{other}` is not a 0/1 flag")),
    }
}

/// Reads a dataset from CSV. Roles left unset in `roles` are inferred from the header.
pub fn ingest_csv(path: &Path, roles: &Roles, default_outcomes: Option<&[&str]>) -> CliResult<Dataset> {
    read_csv(path, roles, default_outcomes).map(|(data, _)| data)
}

/// Like [`ingest_csv`], also returning the roles as resolved against the header.
pub fn read_csv(path: &Path, roles: &Roles, default_outcomes: Option<&[&str]>) -> CliResult<(Dataset, ColumnRoles)> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_with_roles(file, roles, default_outcomes)
}

pub fn ingest_reader<R: Read>(reader: R, roles: &Roles, default_outcomes: Option<&[&str]>) -> CliResult<Dataset> {
    ingest_with_roles(reader, roles, default_outcomes).map(|(data, _)| data)
}

fn ingest_with_roles<R: Read>(
    reader: R,
    roles: &Roles,
    default_outcomes: Option<&[&str]>,
) -> CliResult<(Dataset, ColumnRoles)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let roles = roles.resolve(&header, default_outcomes)?;
    let index = |name: &str| header.iter().position(|h| h == name).expect("resolved against header");
    let cov_idx: Vec<usize> = roles.covariates.iter().map(|c| index(c)).collect();
    let out_idx: Vec<usize> = roles.outcomes.iter().map(|c| index(c)).collect();
    let z_idx = index(&roles.exposure);
    let flag_idx = roles.missing_flag.as_deref().map(index);

    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("malformed CSV: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }

    let levels = match &roles.levels {
        Some(l) => l.clone(),
        None => infer_levels(records.iter().map(|(_, r)| &r[z_idx]).filter(|s| !s.is_empty())),
    };

    let mut problems = Problems::new();
    let mut samples = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        let mut numbers = |idx: &[usize], names: &[String]| -> Vec<f64> {
            idx.iter()
                .zip(names)
                .map(|(&j, name)| {
                    parse_number(&rec[j]).unwrap_or_else(|msg| {
                        problems.push(*line, name, msg);
                        f64::NAN
                    })
                })
                .collect()
        };
        let covariates = numbers(&cov_idx, &roles.covariates);
        let outcomes = numbers(&out_idx, &roles.outcomes);
        let label = &rec[z_idx];
        let exposure = if label.is_empty() {
            None
        } else {
            match levels.iter().position(|l| l == label) {
                Some(z) => Some(z),
                None => {
                    problems.push(
                        *line,
                        &roles.exposure,
                        format!("label `{label}` is not in the level catalog [{}]", levels.join(", ")),
                    );
                    None
                }
            }
        };
        if let (Some(j), Some(name)) = (flag_idx, &roles.missing_flag) {
            match parse_flag(&rec[j]) {
                Ok(flag) if flag == label.is_empty() => problems.push(
                    *line,
                    name,
                    format!(
                        "flag {} disagrees with {} exposure",
                        u8::from(flag),
                        if label.is_empty() { "an empty" } else { "a recorded" }
                    ),
                ),
                Ok(_) => {}
                Err(msg) => problems.push(*line, name, msg),
            }
        }
        samples.push(ObservedSample::new(covariates, exposure, outcomes));
    }
    problems.into_result()?;
    let data = Dataset::new(samples, levels.clone(), roles.covariates.clone(), roles.outcomes.clone());
    Ok((
        data,
        ColumnRoles {
            levels: Some(levels),
            ..roles
        },
    ))
}

/// Writes covariates, an exposure column `z` (empty when missing) and outcomes.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_input = |e: csv::Error| CliError::Input(e.to_string());
    let header: Vec<&str> = data
        .covariate_names
        .iter()
        .map(String::as_str)
        .chain(std::iter::once("z"))
        .chain(data.outcome_names.iter().map(String::as_str))
        .collect();
    w.write_record(&header).map_err(to_input)?;
    for o in &data.samples {
        let z = o.exposure.map_or(String::new(), |z| data.treatment_levels[z].clone());
        let row: Vec<String> = o
            .covariates
            .iter()
            .map(f64::to_string)
            .chain(std::iter::once(z))
            .chain(o.outcomes.iter().map(f64::to_string))
            .collect();
        w.write_record(&row).map_err(to_input)?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}
