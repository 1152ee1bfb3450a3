//! Small numeric helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor n - 1.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Sample covariance (divisor n - 1) of the rows of a row-major n x p matrix.
pub fn covariance(values: &[f64], p: usize) -> Vec<Vec<f64>> {
    let n = values.len() / p;
    let mut means = vec![0.0; p];
    for row in values.chunks_exact(p) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; p]; p];
    if n < 2 {
        return cov;
    }
    for row in values.chunks_exact(p) {
        for a in 0..p {
            let da = row[a] - means[a];
            for b in a..p {
                cov[a][b] += da * (row[b] - means[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            cov[a][b] /= (n - 1) as f64;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

/// Two-sided standard normal quantile z_{1 - alpha/2}.
pub fn normal_quantile(alpha: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - alpha / 2.0)
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Softmax of `log(probs) + shift`.
pub fn tilt_simplex(probs: &[f64], shift: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = probs
        .iter()
        .zip(shift)
        .map(|(p, s)| p.ln() + s)
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mixes a master seed with a path of counters (splitmix64 finalizer).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(master ^ 0x9E37_79B9_7F4A_7C15);
    for &part in path {
        h = splitmix(h ^ splitmix(part.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
