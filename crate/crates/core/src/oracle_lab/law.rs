use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ObservedSample};
use crate::error::{Error, Result};
use crate::learners::TrueNuisances;

const SUM_TOL: f64 = 1e-12;
pub const MAX_X_SUPPORT: usize = 8;
pub const MAX_VALUES_PER_OUTCOME: usize = 8;
pub const MAX_OUTCOME_DIM: usize = 2;
pub const MAX_LEVELS: usize = 3;

/// Finite-support joint law of `(X, Z, R, Y)`.
///
/// Built from `P(X = x)`, `gamma_z(x) = P(Z = z | X = x)`,
/// `mu(y | x, z) = P(Y = y | X = x, Z = z)` and
/// `pi(x, y) = P(R = 1 | X = x, Y = y)`. Because `R` depends only on
/// `(x, y)`, missingness is independent of `Z` given `(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    pub level_labels: Vec<String>,
    pub x_support: Vec<Vec<f64>>,
    pub px: Vec<f64>,
    pub y_support: Vec<Vec<f64>>,
    /// `[x][z]`
    pub gamma: Vec<Vec<f64>>,
    /// `[x][z][y]`
    pub mu: Vec<Vec<Vec<f64>>>,
    /// `[x][y]`
    pub pi: Vec<Vec<f64>>,
}

fn check_simplex(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidLaw(format!("{what} has entries outside [0, 1]")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidLaw(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl DiscreteLaw {
    pub fn new(
        level_labels: Vec<String>,
        x_support: Vec<Vec<f64>>,
        px: Vec<f64>,
        y_support: Vec<Vec<f64>>,
        gamma: Vec<Vec<f64>>,
        mu: Vec<Vec<Vec<f64>>>,
        pi: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let law = Self {
            level_labels,
            x_support,
            px,
            y_support,
            gamma,
            mu,
            pi,
        };
        law.check()?;
        Ok(law)
    }

    fn check(&self) -> Result<()> {
        let (nx, ny, k) = (self.nx(), self.ny(), self.k());
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidLaw("empty support".into()));
        }
        if !(2..=MAX_LEVELS).contains(&k) {
            return Err(Error::InvalidLaw(format!("need 2..={MAX_LEVELS} levels, got {k}")));
        }
        if nx > MAX_X_SUPPORT {
            return Err(Error::InvalidLaw(format!("X support larger than {MAX_X_SUPPORT}")));
        }
        let p = self.p();
        if p == 0 || p > MAX_OUTCOME_DIM {
            return Err(Error::InvalidLaw(format!("outcome dimension must be 1..={MAX_OUTCOME_DIM}")));
        }
        if self.y_support.iter().any(|y| y.len() != p)
            || self.x_support.iter().any(|x| x.len() != self.d())
        {
            return Err(Error::InvalidLaw("ragged support vectors".into()));
        }
        for j in 0..p {
            let mut vals: Vec<f64> = self.y_support.iter().map(|y| y[j]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            if vals.len() > MAX_VALUES_PER_OUTCOME {
                return Err(Error::InvalidLaw(format!(
                    "outcome coordinate {j} takes more than {MAX_VALUES_PER_OUTCOME} values"
                )));
            }
        }
        if self.px.len() != nx || self.gamma.len() != nx || self.mu.len() != nx || self.pi.len() != nx
        {
            return Err(Error::InvalidLaw("tables disagree with the X support".into()));
        }
        check_simplex("P(X)", &self.px)?;
        for x in 0..nx {
            if self.gamma[x].len() != k || self.mu[x].len() != k || self.pi[x].len() != ny {
                return Err(Error::InvalidLaw("table shape mismatch".into()));
            }
            check_simplex("gamma", &self.gamma[x])?;
            for z in 0..k {
                if self.mu[x][z].len() != ny {
                    return Err(Error::InvalidLaw("mu shape mismatch".into()));
                }
                check_simplex("mu", &self.mu[x][z])?;
            }
            if self.pi[x].iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidLaw("pi outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Strict positivity of `gamma` and `pi` within `(eps, 1 - eps)`.
    pub fn check_positivity(&self, eps: f64) -> Result<()> {
        let inside = |v: &f64| *v > eps && *v < 1.0 - eps;
        if !self.gamma.iter().flatten().all(inside) || !self.pi.iter().flatten().all(inside) {
            return Err(Error::InvalidLaw(format!(
                "positivity violated at epsilon {eps}"
            )));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.x_support.len()
    }

    pub fn ny(&self) -> usize {
        self.y_support.len()
    }

    pub fn k(&self) -> usize {
        self.level_labels.len()
    }

    pub fn d(&self) -> usize {
        self.x_support.first().map_or(0, Vec::len)
    }

    pub fn p(&self) -> usize {
        self.y_support.first().map_or(0, Vec::len)
    }

    /// Marginal law of `Y` given `X = x`.
    pub fn y_given_x(&self, x: usize) -> Vec<f64> {
        (0..self.ny())
            .map(|y| (0..self.k()).map(|z| self.gamma[x][z] * self.mu[x][z][y]).sum())
            .collect()
    }

    /// `E(Y | X = x, Z = z)`.
    pub fn conditional_mean(&self, x: usize, z: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.p()];
        for (y, prob) in self.mu[x][z].iter().enumerate() {
            for (acc, v) in m.iter_mut().zip(&self.y_support[y]) {
                *acc += prob * v;
            }
        }
        m
    }

    /// Every observable cell with positive probability. Cells with the
    /// exposure missing have already marginalized `Z`.
    pub fn observed_cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for x in 0..self.nx() {
            let my = self.y_given_x(x);
            for y in 0..self.ny() {
                let pi = self.pi[x][y];
                for z in 0..self.k() {
                    let prob = self.px[x] * self.gamma[x][z] * self.mu[x][z][y] * pi;
                    if prob > 0.0 {
                        cells.push(Cell {
                            x,
                            y,
                            exposure: Some(z),
                            prob,
                        });
                    }
                }
                let prob = self.px[x] * my[y] * (1.0 - pi);
                if prob > 0.0 {
                    cells.push(Cell {
                        x,
                        y,
                        exposure: None,
                        prob,
                    });
                }
            }
        }
        cells
    }

    /// Same probabilities with every outcome vector transformed by `f`.
    pub fn map_outcomes<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Result<Self> {
        let mut law = self.clone();
        law.y_support = self.y_support.iter().map(|y| f(y)).collect();
        law.check()?;
        Ok(law)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        sample_from(self, n, seed)
    }
}

/// One observable cell `(x, y, R, R Z)` and its probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
    pub exposure: Option<usize>,
    pub prob: f64,
}

/// Nuisance functions tabulated on the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceTables {
    /// `[x][y]`
    pub pi: Vec<Vec<f64>>,
    /// `[x][y][z]`
    pub lambda: Vec<Vec<Vec<f64>>>,
    /// `[x][z][coord]`
    pub beta: Vec<Vec<Vec<f64>>>,
    /// `[x][z]`
    pub gamma: Vec<Vec<f64>>,
}

impl NuisanceTables {
    /// Range and simplex constraints of valid nuisance values.
    pub fn check(&self) -> Result<()> {
        let open = |v: &f64| *v > 0.0 && *v < 1.0;
        if !self.pi.iter().flatten().all(open) {
            return Err(Error::InvalidLaw("perturbed pi outside (0, 1)".into()));
        }
        for row in self.lambda.iter().flatten() {
            check_simplex("lambda", row)?;
        }
        for row in &self.gamma {
            if !row.iter().all(open) {
                return Err(Error::InvalidLaw("perturbed gamma outside (0, 1)".into()));
            }
            check_simplex("gamma", row)?;
        }
        if self.beta.iter().flatten().flatten().any(|b| !b.is_finite()) {
            return Err(Error::InvalidLaw("non-finite beta".into()));
        }
        Ok(())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Exact `lambda`, `beta`, `gamma` by Bayes' rule and marginalization:
/// `lambda_z(x, y) = gamma_z(x) mu(y | x, z) / sum_z' gamma_z'(x) mu(y | x, z')`,
/// `gamma_z(x) = sum_y lambda_z(x, y) m(y | x)`,
/// `beta_z(x) = sum_y y lambda_z(x, y) m(y | x)`.
///
/// Fails if the marginalized `gamma` differs from the law's propensity or
/// `beta / gamma` from `E(Y | X, Z)` beyond 1e-12.
pub fn derive_nuisances(law: &DiscreteLaw) -> Result<NuisanceTables> {
    let (nx, ny, k, p) = (law.nx(), law.ny(), law.k(), law.p());
    let mut lambda = vec![vec![vec![0.0; k]; ny]; nx];
    let mut beta = vec![vec![vec![0.0; p]; k]; nx];
    let mut gamma = vec![vec![0.0; k]; nx];
    for x in 0..nx {
        let my = law.y_given_x(x);
        for y in 0..ny {
            for z in 0..k {
                lambda[x][y][z] = if my[y] > 0.0 {
                    law.gamma[x][z] * law.mu[x][z][y] / my[y]
                } else {
                    law.gamma[x][z]
                };
            }
        }
        for z in 0..k {
            for y in 0..ny {
                let w = lambda[x][y][z] * my[y];
                gamma[x][z] += w;
                for (b, v) in beta[x][z].iter_mut().zip(&law.y_support[y]) {
                    *b += v * w;
                }
            }
            if !close(gamma[x][z], law.gamma[x][z]) {
                return Err(Error::InvalidLaw(format!(
                    "marginalized gamma {} differs from P(Z | X) {}",
                    gamma[x][z], law.gamma[x][z]
                )));
            }
            let m = law.conditional_mean(x, z);
            for (b, mj) in beta[x][z].iter().zip(&m) {
                if law.gamma[x][z] > 0.0 && !close(b / gamma[x][z], *mj) {
                    return Err(Error::InvalidLaw(format!(
                        "beta / gamma = {} differs from E(Y | X, Z) = {mj}",
                        b / gamma[x][z]
                    )));
                }
            }
        }
    }
    Ok(NuisanceTables {
        pi: law.pi.clone(),
        lambda,
        beta,
        gamma,
    })
}

fn nearest(support: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, s) in support.iter().enumerate() {
        let d: f64 = s.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// A law's nuisance tables served as functions; inputs are matched to the
/// nearest support point.
#[derive(Debug, Clone)]
pub struct LawOracle {
    pub law: DiscreteLaw,
    pub tables: NuisanceTables,
}

impl LawOracle {
    pub fn new(law: DiscreteLaw) -> Result<Self> {
        let tables = derive_nuisances(&law)?;
        Ok(Self { law, tables })
    }

    /// Serves `tables` (which may be perturbed) on `law`'s support.
    pub fn with_tables(law: DiscreteLaw, tables: NuisanceTables) -> Self {
        Self { law, tables }
    }

    fn xi(&self, x: &[f64]) -> usize {
        nearest(&self.law.x_support, x)
    }

    fn yi(&self, y: &[f64]) -> usize {
        nearest(&self.law.y_support, y)
    }
}

impl TrueNuisances for LawOracle {
    fn levels(&self) -> usize {
        self.law.k()
    }

    fn covariate_dim(&self) -> usize {
        self.law.d()
    }

    fn pi(&self, x: &[f64], y: &[f64]) -> f64 {
        self.tables.pi[self.xi(x)][self.yi(y)]
    }

    fn lambda(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.tables.lambda[self.xi(x)][self.yi(y)].clone()
    }

    fn beta(&self, x: &[f64], z: usize) -> Vec<f64> {
        self.tables.beta[self.xi(x)][z].clone()
    }

    fn gamma(&self, x: &[f64]) -> Vec<f64> {
        self.tables.gamma[self.xi(x)].clone()
    }
}

/// `n` i.i.d. records drawn from the law's generative factorization.
pub fn sample_from(law: &DiscreteLaw, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_dist = WeightedIndex::new(&law.px).expect("valid P(X)");
    let z_dist: Vec<WeightedIndex<f64>> = law
        .gamma
        .iter()
        .map(|g| WeightedIndex::new(g).expect("valid gamma"))
        .collect();
    let y_dist: Vec<Vec<WeightedIndex<f64>>> = law
        .mu
        .iter()
        .map(|row| {
            row.iter()
                .map(|m| WeightedIndex::new(m).expect("valid mu"))
                .collect()
        })
        .collect();
    let samples = (0..n)
        .map(|_| {
            let x = x_dist.sample(&mut rng);
            let z = z_dist[x].sample(&mut rng);
            let y = y_dist[x][z].sample(&mut rng);
            let r = rng.gen::<f64>() < law.pi[x][y];
            ObservedSample::new(
                law.x_support[x].clone(),
                r.then_some(z),
                law.y_support[y].clone(),
            )
        })
        .collect();
    Dataset::with_default_names(samples, law.level_labels.clone())
}

/// Shape of a randomly generated law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawShape {
    pub nx: usize,
    pub d: usize,
    pub k: usize,
    pub ny: usize,
    pub p: usize,
    /// Positivity margin for `gamma` and `pi`.
    pub eps: f64,
}

impl Default for LawShape {
    fn default() -> Self {
        Self {
            nx: 3,
            d: 1,
            k: 2,
            ny: 4,
            p: 1,
            eps: 0.05,
        }
    }
}

fn flat_dirichlet<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1) + 1e-9).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|v| v / total).collect()
}

/// Random law with flat-Dirichlet tables. `gamma` is squeezed into
/// `[a, 1 - (k - 1) a]` with `a` just above `eps`, and `pi` is uniform on
/// `(eps, 1 - eps)`.
pub fn random_law<R: Rng>(rng: &mut R, shape: LawShape) -> Result<DiscreteLaw> {
    let LawShape {
        nx,
        d,
        k,
        ny,
        p,
        eps,
    } = shape;
    let floor = eps * 1.02;
    if k as f64 * floor >= 1.0 {
        return Err(Error::InvalidLaw("too many levels for the positivity margin".into()));
    }
    let x_support: Vec<Vec<f64>> = (0..nx)
        .map(|i| {
            (0..d)
                .map(|j| if j == 0 { i as f64 } else { rng.sample(StandardNormal) })
                .collect()
        })
        .collect();
    let y_support: Vec<Vec<f64>> = (0..ny)
        .map(|i| {
            (0..p)
                .map(|_| i as f64 * 0.5 + rng.gen_range(-0.2..0.2))
                .collect()
        })
        .collect();
    let px = flat_dirichlet(rng, nx);
    let gamma = (0..nx)
        .map(|_| {
            flat_dirichlet(rng, k)
                .into_iter()
                .map(|g| floor + (1.0 - k as f64 * floor) * g)
                .collect()
        })
        .collect();
    let mu = (0..nx)
        .map(|_| (0..k).map(|_| flat_dirichlet(rng, ny)).collect())
        .collect();
    let pi = (0..nx)
        .map(|_| (0..ny).map(|_| rng.gen_range(floor..1.0 - floor)).collect())
        .collect();
    DiscreteLaw::new(
        (0..k).map(|z| z.to_string()).collect(),
        x_support,
        px,
        y_support,
        gamma,
        mu,
        pi,
    )
}
