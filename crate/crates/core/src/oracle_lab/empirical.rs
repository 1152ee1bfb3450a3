use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::identities::{phi_at_cell, PerturbedLaw};
use crate::error::{Error, Result};
use crate::stats::{derive_seed, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConfig {
    pub level: usize,
    pub coord: usize,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRow {
    pub n: usize,
    /// Standard deviation of `(P_n - P)(fhat - f)` over replicates.
    pub sd: f64,
    /// `||fhat - f||` in `L2(P)`.
    pub norm: f64,
    /// `norm / sqrt(n)`
    pub scaled_norm: f64,
    /// `sd / scaled_norm`
    pub ratio: f64,
}

/// Draws cell counts for `n` records: a multinomial built from conditional
/// binomials, so the cost does not grow with `n`.
fn multinomial(probs: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut left = n as u64;
    let mut mass = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() || mass <= p {
            counts[i] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let c = Binomial::new(left, q).expect("valid binomial").sample(rng);
        counts[i] = c;
        left -= c;
        mass -= p;
    }
    counts
}

/// Monte Carlo study of `(P_n - P)(fhat - f)` with `fhat = phi(.; P-bar)` and
/// `f = phi(.; P)` for one coordinate, sampling from `pbar.base`.
pub fn empirical_process_check(
    pbar: &PerturbedLaw,
    config: &EmpiricalConfig,
) -> Result<Vec<EmpiricalRow>> {
    let law = &pbar.base;
    if config.level >= law.k() || config.coord >= law.p() {
        return Err(Error::Config("level or coordinate out of range".into()));
    }
    if config.reps < 2 || config.n_grid.iter().any(|&n| n == 0) {
        return Err(Error::Config("need at least 2 replicates and positive n".into()));
    }
    let cells = law.observed_cells();
    let probs: Vec<f64> = cells.iter().map(|c| c.prob).collect();
    let diff: Vec<f64> = cells
        .iter()
        .map(|c| {
            phi_at_cell(law, &pbar.tables, c, config.level)[config.coord]
                - phi_at_cell(law, &pbar.base_tables, c, config.level)[config.coord]
        })
        .collect();
    let p_mean: f64 = probs.iter().zip(&diff).map(|(p, d)| p * d).sum();
    let norm = probs
        .iter()
        .zip(&diff)
        .map(|(p, d)| p * d * d)
        .sum::<f64>()
        .sqrt();

    let rows = config
        .n_grid
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let terms: Vec<f64> = (0..config.reps)
                .into_par_iter()
                .map(|rep| {
                    let seed = derive_seed(config.seed, &[ni as u64, rep as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let counts = multinomial(&probs, n, &mut rng);
                    let pn: f64 = counts
                        .iter()
                        .zip(&diff)
                        .map(|(&c, d)| c as f64 * d)
                        .sum::<f64>()
                        / n as f64;
                    pn - p_mean
                })
                .collect();
            let sd = std_dev(&terms);
            let scaled_norm = norm / (n as f64).sqrt();
            EmpiricalRow {
                n,
                sd,
                norm,
                scaled_norm,
                ratio: if scaled_norm > 0.0 { sd / scaled_norm } else { 0.0 },
            }
        })
        .collect();
    Ok(rows)
}
