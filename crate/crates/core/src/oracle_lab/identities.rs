use rand::Rng;
use serde::{Deserialize, Serialize};

use super::law::{derive_nuisances, Cell, DiscreteLaw, NuisanceTables};
use crate::error::{Error, Result};
use crate::estimator::eif_from_values;
use crate::stats::{expit, logit, tilt_simplex};

/// `E{beta_z(X) / gamma_z(X)}` under `px` with the given tables.
pub fn psi_of(px: &[f64], tables: &NuisanceTables, z: usize) -> Vec<f64> {
    let p = tables.beta[0][z].len();
    let mut psi = vec![0.0; p];
    for (x, w) in px.iter().enumerate() {
        for (acc, b) in psi.iter_mut().zip(&tables.beta[x][z]) {
            *acc += w * b / tables.gamma[x][z];
        }
    }
    psi
}

/// `sum_x P(x) E(Y | X = x, Z = z)`, the complete-data form.
pub fn psi_direct(law: &DiscreteLaw, z: usize) -> Vec<f64> {
    let mut psi = vec![0.0; law.p()];
    for x in 0..law.nx() {
        for (acc, m) in psi.iter_mut().zip(law.conditional_mean(x, z)) {
            *acc += law.px[x] * m;
        }
    }
    psi
}

/// `psi_z = E{beta_z(X) / gamma_z(X)}` by enumeration, checked against the
/// complete-data form to 1e-12.
pub fn psi_true(law: &DiscreteLaw, z: usize) -> Result<Vec<f64>> {
    let tables = derive_nuisances(law)?;
    let psi = psi_of(&law.px, &tables, z);
    let direct = psi_direct(law, z);
    for (a, b) in psi.iter().zip(&direct) {
        if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
            return Err(Error::InvalidLaw(format!(
                "identification mismatch: {a} vs {b}"
            )));
        }
    }
    Ok(psi)
}

/// `phi_z` at one cell using `tables`.
pub fn phi_at_cell(law: &DiscreteLaw, tables: &NuisanceTables, cell: &Cell, z: usize) -> Vec<f64> {
    eif_from_values(
        &law.y_support[cell.y],
        cell.exposure.is_some(),
        cell.exposure,
        z,
        tables.pi[cell.x][cell.y],
        tables.lambda[cell.x][cell.y][z],
        &tables.beta[cell.x][z],
        tables.gamma[cell.x][z],
    )
}

/// `E_P{phi_z(O; tables)}` with the cells of `law`.
pub fn eif_mean(law: &DiscreteLaw, tables: &NuisanceTables, z: usize) -> Vec<f64> {
    let mut acc = vec![0.0; law.p()];
    for cell in law.observed_cells() {
        for (a, v) in acc.iter_mut().zip(phi_at_cell(law, tables, &cell, z)) {
            *a += cell.prob * v;
        }
    }
    acc
}

/// `E_P{phi_z(O; tables)} - psi_z(tables)`; zero when `tables` are the
/// law's own nuisances.
pub fn eif_mean_residual(law: &DiscreteLaw, tables: &NuisanceTables, z: usize) -> Vec<f64> {
    eif_mean(law, tables, z)
        .into_iter()
        .zip(psi_of(&law.px, tables, z))
        .map(|(m, psi)| m - psi)
        .collect()
}

/// Max-abs mean of the centered influence function under the true law.
pub fn eif_mean_zero_check(law: &DiscreteLaw, z: usize) -> Result<f64> {
    let tables = derive_nuisances(law)?;
    Ok(max_abs(&eif_mean_residual(law, &tables, z)))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Which nuisances a perturbation moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuisanceMask {
    pub pi: bool,
    pub lambda: bool,
    pub beta: bool,
    pub gamma: bool,
}

impl NuisanceMask {
    pub const ALL: Self = Self {
        pi: true,
        lambda: true,
        beta: true,
        gamma: true,
    };
}

/// Directions for nuisance-table perturbations. `pi` moves on the logit
/// scale, `lambda` and `gamma` by exponential tilting, `beta` additively,
/// so every `t` yields valid tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub pi: Option<Vec<Vec<f64>>>,
    pub lambda: Option<Vec<Vec<Vec<f64>>>>,
    pub beta: Option<Vec<Vec<Vec<f64>>>>,
    pub gamma: Option<Vec<Vec<f64>>>,
}

impl Perturbation {
    pub fn random<R: Rng>(law: &DiscreteLaw, mask: NuisanceMask, rng: &mut R) -> Self {
        let (nx, ny, k, p) = (law.nx(), law.ny(), law.k(), law.p());
        let mut unit = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let pi = mask.pi.then(|| (0..nx).map(|_| unit(ny)).collect());
        let lambda = mask
            .lambda
            .then(|| (0..nx).map(|_| (0..ny).map(|_| unit(k)).collect()).collect());
        let beta = mask
            .beta
            .then(|| (0..nx).map(|_| (0..k).map(|_| unit(p)).collect()).collect());
        let gamma = mask.gamma.then(|| (0..nx).map(|_| unit(k)).collect());
        Self {
            pi,
            lambda,
            beta,
            gamma,
        }
    }

    /// Euclidean norm over every perturbed entry.
    pub fn norm(&self) -> f64 {
        let sq = |v: &f64| v * v;
        let pi: f64 = self.pi.iter().flatten().flatten().map(sq).sum();
        let lambda: f64 = self.lambda.iter().flatten().flatten().flatten().map(sq).sum();
        let beta: f64 = self.beta.iter().flatten().flatten().flatten().map(sq).sum();
        let gamma: f64 = self.gamma.iter().flatten().flatten().map(sq).sum();
        (pi + lambda + beta + gamma).sqrt()
    }

    /// The same direction rescaled to unit norm; a zero direction is returned as is.
    pub fn normalized(&self) -> Self {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        let s = |v: &f64| v / norm;
        Self {
            pi: self.pi.as_ref().map(|d| d.iter().map(|r| r.iter().map(s).collect()).collect()),
            lambda: self.lambda.as_ref().map(|d| {
                d.iter()
                    .map(|rs| rs.iter().map(|r| r.iter().map(s).collect()).collect())
                    .collect()
            }),
            beta: self.beta.as_ref().map(|d| {
                d.iter()
                    .map(|rs| rs.iter().map(|r| r.iter().map(s).collect()).collect())
                    .collect()
            }),
            gamma: self.gamma.as_ref().map(|d| d.iter().map(|r| r.iter().map(s).collect()).collect()),
        }
    }

    pub fn apply(&self, tables: &NuisanceTables, t: f64) -> NuisanceTables {
        let mut out = tables.clone();
        if let Some(d) = &self.pi {
            for (row, drow) in out.pi.iter_mut().zip(d) {
                for (v, dv) in row.iter_mut().zip(drow) {
                    *v = expit(logit(*v) + t * dv);
                }
            }
        }
        if let Some(d) = &self.lambda {
            for (rows, drows) in out.lambda.iter_mut().zip(d) {
                for (row, drow) in rows.iter_mut().zip(drows) {
                    let shift: Vec<f64> = drow.iter().map(|v| t * v).collect();
                    *row = tilt_simplex(row, &shift);
                }
            }
        }
        if let Some(d) = &self.beta {
            for (rows, drows) in out.beta.iter_mut().zip(d) {
                for (row, drow) in rows.iter_mut().zip(drows) {
                    for (v, dv) in row.iter_mut().zip(drow) {
                        *v += t * dv;
                    }
                }
            }
        }
        if let Some(d) = &self.gamma {
            for (row, drow) in out.gamma.iter_mut().zip(d) {
                let shift: Vec<f64> = drow.iter().map(|v| t * v).collect();
                *row = tilt_simplex(row, &shift);
            }
        }
        out
    }
}

/// Directions for perturbing a law's primitive tables, giving another valid
/// law whose nuisances are all derived coherently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawPerturbation {
    pub px: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub mu: Vec<Vec<Vec<f64>>>,
    pub pi: Vec<Vec<f64>>,
}

impl LawPerturbation {
    pub fn random<R: Rng>(law: &DiscreteLaw, rng: &mut R) -> Self {
        let (nx, ny, k) = (law.nx(), law.ny(), law.k());
        let mut unit = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        Self {
            px: unit(nx),
            gamma: (0..nx).map(|_| unit(k)).collect(),
            mu: (0..nx).map(|_| (0..k).map(|_| unit(ny)).collect()).collect(),
            pi: (0..nx).map(|_| unit(ny)).collect(),
        }
    }

    pub fn apply(&self, law: &DiscreteLaw, t: f64) -> Result<DiscreteLaw> {
        let scaled = |d: &[f64]| d.iter().map(|v| t * v).collect::<Vec<_>>();
        let mut out = law.clone();
        out.px = tilt_simplex(&law.px, &scaled(&self.px));
        for x in 0..law.nx() {
            out.gamma[x] = tilt_simplex(&law.gamma[x], &scaled(&self.gamma[x]));
            for z in 0..law.k() {
                out.mu[x][z] = tilt_simplex(&law.mu[x][z], &scaled(&self.mu[x][z]));
            }
            for y in 0..law.ny() {
                out.pi[x][y] = expit(logit(law.pi[x][y]) + t * self.pi[x][y]);
            }
        }
        // Tilting renormalizes each row, but only to rounding; restore exact sums.
        DiscreteLaw::new(
            out.level_labels,
            out.x_support,
            out.px,
            out.y_support,
            out.gamma,
            out.mu,
            out.pi,
        )
    }
}

/// A law `P` paired with the nuisance tables of a second distribution
/// `P-bar`. When `P-bar` is itself a law (`pbar_law`), every integral under
/// it is computed by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedLaw {
    pub base: DiscreteLaw,
    pub base_tables: NuisanceTables,
    pub tables: NuisanceTables,
    pub t: f64,
    pub pbar_law: Option<DiscreteLaw>,
}

impl PerturbedLaw {
    /// Nuisance tables moved directly along `direction`.
    pub fn free(base: &DiscreteLaw, direction: &Perturbation, t: f64) -> Result<Self> {
        let base_tables = derive_nuisances(base)?;
        let tables = direction.apply(&base_tables, t);
        tables.check()?;
        Ok(Self {
            base: base.clone(),
            base_tables,
            tables,
            t,
            pbar_law: None,
        })
    }

    /// Explicit tables for `P-bar`.
    pub fn with_tables(base: &DiscreteLaw, tables: NuisanceTables) -> Result<Self> {
        tables.check()?;
        Ok(Self {
            base: base.clone(),
            base_tables: derive_nuisances(base)?,
            tables,
            t: f64::NAN,
            pbar_law: None,
        })
    }

    /// `P-bar` obtained by perturbing the law's primitive tables.
    pub fn coherent(base: &DiscreteLaw, direction: &LawPerturbation, t: f64) -> Result<Self> {
        let pbar = direction.apply(base, t)?;
        Ok(Self {
            base: base.clone(),
            base_tables: derive_nuisances(base)?,
            tables: derive_nuisances(&pbar)?,
            t,
            pbar_law: Some(pbar),
        })
    }

    /// `psi_z(P-bar)`; the covariate law is `P-bar`'s when available, else `P`'s.
    pub fn psi_bar(&self, z: usize) -> Vec<f64> {
        let px = self.pbar_law.as_ref().map_or(&self.base.px, |l| &l.px);
        psi_of(px, &self.tables, z)
    }
}

/// Second-order remainder of the expansion, evaluated under `P`:
///
/// ```text
/// E_P[ {(Y - bbar/gbar)/gbar} {(pi - pibar)/pibar} (lambda - lbar)
///      + {(beta - bbar)/gamma + (bbar/gbar)(gbar - gamma)/gamma} (gamma - gbar)/gbar ]
/// ```
pub fn remainder(
    law: &DiscreteLaw,
    truth: &NuisanceTables,
    bar: &NuisanceTables,
    z: usize,
) -> Vec<f64> {
    let p = law.p();
    let mut r = vec![0.0; p];
    for x in 0..law.nx() {
        let my = law.y_given_x(x);
        let g = truth.gamma[x][z];
        let gb = bar.gamma[x][z];
        for j in 0..p {
            let b = truth.beta[x][z][j];
            let bb = bar.beta[x][z][j];
            let mbar = bb / gb;
            let mut first = 0.0;
            for y in 0..law.ny() {
                let pi = truth.pi[x][y];
                let pib = bar.pi[x][y];
                let lam = truth.lambda[x][y][z];
                let lamb = bar.lambda[x][y][z];
                first += my[y]
                    * ((law.y_support[y][j] - mbar) / gb)
                    * ((pi - pib) / pib)
                    * (lam - lamb);
            }
            let second = ((b - bb) / g + mbar * (gb - g) / g) * ((g - gb) / gb);
            r[j] += law.px[x] * (first + second);
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VonMisesCheck {
    pub level: usize,
    pub t: f64,
    /// `psi(P-bar) - psi(P)`
    pub lhs: Vec<f64>,
    /// `E_Pbar{phi(P-bar) - psi(P-bar)}`; zero by construction for free tables.
    pub integral_pbar: Vec<f64>,
    /// `E_P{phi(P-bar) - psi(P-bar)}`
    pub integral_p: Vec<f64>,
    /// Closed-form remainder.
    pub remainder: Vec<f64>,
    /// `integral_pbar - integral_p + remainder`
    pub rhs: Vec<f64>,
    pub residual: f64,
}

/// Both sides of the distributional Taylor expansion by exact enumeration.
pub fn vonmises_identity_check(pbar: &PerturbedLaw, z: usize) -> VonMisesCheck {
    let psi = psi_of(&pbar.base.px, &pbar.base_tables, z);
    let psi_bar = pbar.psi_bar(z);
    let lhs: Vec<f64> = psi_bar.iter().zip(&psi).map(|(a, b)| a - b).collect();
    let integral_p: Vec<f64> = eif_mean(&pbar.base, &pbar.tables, z)
        .into_iter()
        .zip(&psi_bar)
        .map(|(m, s)| m - s)
        .collect();
    let integral_pbar: Vec<f64> = match &pbar.pbar_law {
        Some(law) => eif_mean(law, &pbar.tables, z)
            .into_iter()
            .zip(&psi_bar)
            .map(|(m, s)| m - s)
            .collect(),
        None => vec![0.0; lhs.len()],
    };
    let rem = remainder(&pbar.base, &pbar.base_tables, &pbar.tables, z);
    let rhs: Vec<f64> = integral_pbar
        .iter()
        .zip(&integral_p)
        .zip(&rem)
        .map(|((a, b), r)| a - b + r)
        .collect();
    let residual = lhs
        .iter()
        .zip(&rhs)
        .fold(0.0_f64, |m, (l, r)| m.max((l - r).abs()));
    VonMisesCheck {
        level: z,
        t: pbar.t,
        lhs,
        integral_pbar,
        integral_p,
        remainder: rem,
        rhs,
        residual,
    }
}

/// Remainder at `P-bar`; vanishes when `gamma` is correct and either `pi`
/// or `lambda` is.
pub fn double_robustness_check(pbar: &PerturbedLaw, z: usize) -> Vec<f64> {
    remainder(&pbar.base, &pbar.base_tables, &pbar.tables, z)
}
