//! Acceptance gate. Runs every criterion, prints one line each, and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use mexp_core::estimator::{crossfit_estimate, eif_from_values, CrossFitOptions};
use mexp_core::iv::{late_estimate, late_from_influence, late_identify, IvDataset};
use mexp_core::learners::{LearnerKind, LearnerSet, LearnerSpec};
use mexp_core::oracle_lab::*;
use mexp_core::simgen::{iv_law, sample, DgpSpec, Family, IvParams, Knob};
use mexp_core::simulation::{run_simulation, EstimatorKind, SimConfig, SimSummary, Target};
use mexp_core::stats::{derive_seed, mean, ols_slope};
use mexp_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAWS: usize = 60;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_shape(rng: &mut ChaCha8Rng) -> LawShape {
    LawShape {
        nx: rng.gen_range(1..=8),
        d: rng.gen_range(1..=2),
        k: rng.gen_range(2..=3),
        ny: rng.gen_range(2..=8),
        p: rng.gen_range(1..=2),
        eps: 0.05,
    }
}

fn laws(seed: u64) -> Vec<DiscreteLaw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..LAWS)
        .map(|_| {
            let shape = random_shape(&mut rng);
            random_law(&mut rng, shape).unwrap()
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn summary<'a>(res: &'a [SimSummary], n: usize, est: EstimatorKind, target: &str) -> &'a SimSummary {
    res.iter()
        .find(|s| s.n == n && s.estimator == est && s.target.to_string() == target)
        .expect("summary present")
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn c01_identification() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for law in laws(101) {
        for z in 0..law.k() {
            let tables = derive_nuisances(&law).unwrap();
            let a = psi_of(&law.px, &tables, z);
            let b = psi_direct(&law, z);
            for (u, v) in a.iter().zip(&b) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && secs < 5.0,
        format!("{LAWS} laws, max |difference| {worst:.2e}, {secs:.2} s"),
    )
}

fn c02_expansion() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let (mut ratios_lo, mut ratios_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for law in laws(102) {
        let dir = Perturbation::random(&law, NuisanceMask::ALL, &mut rng);
        let t = rng.gen_range(0.01..0.5);
        let pb = PerturbedLaw::free(&law, &dir, t).unwrap();
        let ldir = LawPerturbation::random(&law, &mut rng);
        let coherent = PerturbedLaw::coherent(&law, &ldir, t).unwrap();
        for z in 0..law.k() {
            worst = worst.max(vonmises_identity_check(&pb, z).residual);
            worst = worst.max(vonmises_identity_check(&coherent, z).residual);
        }
        let base = derive_nuisances(&law).unwrap();
        let unit = dir.normalized();
        let r1 = remainder(&law, &base, &unit.apply(&base, 0.02), 0);
        let r2 = remainder(&law, &base, &unit.apply(&base, 0.04), 0);
        for (a, b) in r1.iter().zip(&r2) {
            let ratio = b / a;
            ratios_lo = ratios_lo.min(ratio);
            ratios_hi = ratios_hi.max(ratio);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && ratios_lo >= 3.5 && ratios_hi <= 4.5 && secs < 10.0,
        format!(
            "{} pairs, max residual {worst:.2e}, unit directions R(0.04)/R(0.02) in [{ratios_lo:.3}, {ratios_hi:.3}], {secs:.2} s",
            2 * LAWS
        ),
    )
}

fn c03_mean_zero() -> Outcome {
    let mut worst: f64 = 0.0;
    for law in laws(103) {
        for z in 0..law.k() {
            worst = worst.max(eif_mean_zero_check(&law, z).unwrap());
        }
    }
    outcome(worst < 1e-10, format!("{LAWS} laws, max |mean| {worst:.2e}"))
}

fn c04_double_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(204);
    let mask = |pi, lambda, gamma| NuisanceMask {
        pi,
        lambda,
        beta: true,
        gamma,
    };
    let mut worst_zero: f64 = 0.0;
    let mut smallest_violation = f64::INFINITY;
    for law in laws(104) {
        let t = rng.gen_range(0.2..1.0);
        for m in [mask(false, true, false), mask(true, false, false)] {
            let dir = Perturbation::random(&law, m, &mut rng);
            let pb = PerturbedLaw::free(&law, &dir, t).unwrap();
            for z in 0..law.k() {
                worst_zero = worst_zero.max(max_abs(&double_robustness_check(&pb, z)));
            }
        }
        // gamma wrong with pi right, and gamma right with both pi and lambda wrong
        for m in [mask(false, true, true), mask(true, true, false)] {
            let dir = Perturbation::random(&law, m, &mut rng);
            let pb = PerturbedLaw::free(&law, &dir, t).unwrap();
            smallest_violation = smallest_violation.min(max_abs(&double_robustness_check(&pb, 0)));
        }
    }
    outcome(
        worst_zero < 1e-12 && smallest_violation > 1e-6,
        format!("max |R| in robust patterns {worst_zero:.2e}, min |R| when violated {smallest_violation:.2e}"),
    )
}

fn c05_aipw() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=4);
        let z = rng.gen_range(0..k);
        let z_obs = rng.gen_range(0..k);
        let y = rng.gen_range(-10.0..10.0);
        let gamma = rng.gen_range(0.01..0.99);
        let mu = rng.gen_range(-5.0..5.0);
        let lambda = rng.gen_range(0.0..1.0);
        let phi = eif_from_values(&[y], true, Some(z_obs), z, 1.0, lambda, &[mu * gamma], gamma)[0];
        let ind = if z_obs == z { 1.0 } else { 0.0 };
        let classical = ind * (y - mu) / gamma + mu;
        worst = worst.max((phi - classical).abs() / classical.abs().max(1.0));
    }
    outcome(worst <= 1e-12, format!("1000 draws, max relative gap {worst:.2e}"))
}

fn c06_coverage() -> Outcome {
    let start = Instant::now();
    let mut cfg = SimConfig::new(Family::DiscreteReference, vec![2000], 500, 206);
    cfg.targets = vec!["psi:1".parse().unwrap(), "ate:1-0".parse().unwrap()];
    let res = run_simulation(&cfg).unwrap();
    let psi = summary(&res.summaries, 2000, EstimatorKind::OneStep, "psi:1");
    let ate = summary(&res.summaries, 2000, EstimatorKind::OneStep, "ate:1-0");
    let (cp, ca) = (psi.coverage.unwrap(), ate.coverage.unwrap());
    outcome(
        in_range(cp, 0.925, 0.975) && in_range(ca, 0.925, 0.975) && psi.failures + ate.failures == 0,
        format!(
            "kernel learners, n = 2000, 500 reps: psi_1 {:.1}%, ATE {:.1}%, {:.1} s",
            100.0 * cp,
            100.0 * ca,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn rate_config(n_grid: Vec<usize>, reps: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::new(Family::DiscreteReference, n_grid, reps, seed);
    cfg.learners = LearnerSpec::uniform(LearnerKind::Oracle);
    cfg.knob = Knob::SlowRate {
        exponent: 0.25,
        scale: 1.0,
        nuisances: None,
    };
    cfg.estimators = vec![EstimatorKind::OneStep, EstimatorKind::Plugin];
    cfg
}

fn c07_root_n() -> Outcome {
    let grid = vec![1000, 4000, 16000];
    let res = run_simulation(&rate_config(grid.clone(), 400, 207)).unwrap();
    let rows: Vec<&SimSummary> = grid
        .iter()
        .map(|&n| summary(&res.summaries, n, EstimatorKind::OneStep, "psi:1"))
        .collect();
    let ln: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
    let lb: Vec<f64> = rows.iter().map(|s| s.bias.abs().ln()).collect();
    let slope = ols_slope(&ln, &lb);
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[0].rmse / w[1].rmse).collect();
    outcome(
        in_range(slope, -0.65, -0.35) && ratios.iter().all(|r| in_range(*r, 1.6, 2.5)),
        format!(
            "|bias| {:.4} / {:.4} / {:.4}, slope {slope:.3}, RMSE ratios {:.2}, {:.2}",
            rows[0].bias.abs(),
            rows[1].bias.abs(),
            rows[2].bias.abs(),
            ratios[0],
            ratios[1]
        ),
    )
}

fn c08_robust_simulation() -> Outcome {
    let run = |knob: Knob, seed| {
        let mut cfg = SimConfig::new(Family::DiscreteReference, vec![8000], 100, seed);
        cfg.learners = LearnerSpec::uniform(LearnerKind::Oracle);
        cfg.knob = knob;
        run_simulation(&cfg).unwrap().summaries[0].bias
    };
    let pi = run(Knob::BiasPi, 208);
    let gamma = run(Knob::BiasGamma, 209);
    outcome(
        pi.abs() < 0.02 && gamma.abs() > 0.05,
        format!("n = 8000: bias with wrong pi {pi:+.4}, with wrong gamma {gamma:+.4}"),
    )
}

fn c09_late() -> Outcome {
    let truth = late_identify(&iv_law(&IvParams::default()).unwrap()).unwrap();
    let mut cfg = SimConfig::new(Family::IvReference(IvParams::default()), vec![4000], 500, 210);
    cfg.targets = vec![Target::Late];
    let res = run_simulation(&cfg).unwrap();
    let cov = res.summaries[0].coverage.unwrap();

    let kernel = LearnerSet::new(LearnerSpec::uniform(LearnerKind::kernel()));
    let opts = CrossFitOptions::default();
    let mut same = sample(&Family::IvReference(IvParams::default()), 4000, 211).unwrap();
    same.samples.iter_mut().for_each(|o| o.outcomes[1] = o.outcomes[0]);
    let (identity, _) = late_estimate(&IvDataset::new(same).unwrap(), &kernel, &opts, 0.01).unwrap();

    // zero first stage: the guard either refuses the ratio or flags it
    let null = IvParams {
        first_stage: 0.0,
        ..IvParams::default()
    };
    let reps = 100;
    let flagged = (0..reps)
        .filter(|&r| {
            let data = sample(&Family::IvReference(null.clone()), 4000, derive_seed(212, &[r])).unwrap();
            let fit = crossfit_estimate(&data, &kernel, &opts).unwrap();
            match late_from_influence(&fit.influence[0], &fit.influence[1], 0.05, 0.01) {
                Err(Error::WeakInstrument { .. }) => true,
                Ok(r) => r.weak_instrument,
                Err(_) => false,
            }
        })
        .count();
    let no_compliers = matches!(late_identify(&iv_law(&null).unwrap()), Err(Error::NoCompliers));
    outcome(
        (truth - 0.5).abs() < 1e-12
            && in_range(cov, 0.92, 0.98)
            && identity.theta_hat == 1.0
            && flagged as f64 >= 0.95 * reps as f64
            && no_compliers,
        format!(
            "theta = {truth}, coverage {:.1}% (500 reps), Y = A gives {}, weak first stage caught {flagged}/{reps}",
            100.0 * cov,
            identity.theta_hat
        ),
    )
}

fn c10_empirical_process() -> Outcome {
    let law = mexp_core::simgen::discrete_reference_law().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(213);
    let dir = Perturbation::random(&law, NuisanceMask::ALL, &mut rng);
    let cfg = EmpiricalConfig {
        level: 1,
        coord: 0,
        n_grid: vec![250, 1000, 4000],
        reps: 2000,
        seed: 214,
    };
    let full = empirical_process_check(&PerturbedLaw::free(&law, &dir, 0.2).unwrap(), &cfg).unwrap();
    let half = empirical_process_check(&PerturbedLaw::free(&law, &dir, 0.1).unwrap(), &cfg).unwrap();
    let n_ratios: Vec<f64> = full.windows(2).map(|w| w[0].sd / w[1].sd).collect();
    let t_ratios: Vec<f64> = full.iter().zip(&half).map(|(a, b)| a.sd / b.sd).collect();
    let tracking = full.iter().chain(&half).all(|r| in_range(r.ratio, 0.5, 2.0));
    let zero = empirical_process_check(&PerturbedLaw::free(&law, &dir, 0.0).unwrap(), &cfg).unwrap();
    outcome(
        n_ratios.iter().all(|r| in_range(*r, 1.6, 2.5))
            && t_ratios.iter().all(|r| in_range(*r, 1.6, 2.5))
            && tracking
            && zero.iter().all(|r| r.sd < 1e-12),
        format!(
            "SD ratio per 4x n {:.2}, {:.2}; per halved t {:.2}, {:.2}, {:.2}; SD / (norm / sqrt n) in [{:.2}, {:.2}]; SD at t = 0 {:.1e}",
            n_ratios[0],
            n_ratios[1],
            t_ratios[0],
            t_ratios[1],
            t_ratios[2],
            full.iter().chain(&half).map(|r| r.ratio).fold(f64::INFINITY, f64::min),
            full.iter().chain(&half).map(|r| r.ratio).fold(0.0, f64::max),
            zero.iter().map(|r| r.sd).fold(0.0, f64::max),
        ),
    )
}

fn c11_onestep_vs_plugin() -> Outcome {
    let batches = 200;
    let per_batch = 5;
    let res = run_simulation(&rate_config(vec![8000], batches * per_batch, 215)).unwrap();
    let truth = res.truth.psi[1][0];
    let errors = |est: EstimatorKind| -> Vec<f64> {
        let vals: Vec<f64> = res
            .rows
            .iter()
            .filter(|r| r.estimator == est)
            .map(|r| r.estimate.unwrap())
            .collect();
        vals.chunks(per_batch).map(|c| (mean(c) - truth).abs()).collect()
    };
    let (one, plug) = (errors(EstimatorKind::OneStep), errors(EstimatorKind::Plugin));
    let wins = one.iter().zip(&plug).filter(|(a, b)| a < b).count();
    outcome(
        wins as f64 >= 0.9 * batches as f64,
        format!(
            "one-step closer in {wins}/{batches} batches (mean |bias| {:.4} vs {:.4})",
            mean(&one),
            mean(&plug)
        ),
    )
}

fn reports_json() -> String {
    let kernel = LearnerSet::new(LearnerSpec::uniform(LearnerKind::kernel()));
    let opts = CrossFitOptions {
        folds: 5,
        seed: 99,
        ..CrossFitOptions::default()
    };
    let data = sample(&Family::DiscreteReference, 3000, 216).unwrap();
    let estimate = crossfit_estimate(&data, &kernel, &opts).unwrap().report;
    let iv = IvDataset::new(sample(&Family::IvReference(IvParams::default()), 3000, 217).unwrap()).unwrap();
    let (late, _) = late_estimate(&iv, &kernel, &opts, 0.01).unwrap();
    let mut cfg = SimConfig::new(Family::DiscreteReference, vec![500, 1000], 40, 218);
    cfg.estimators = vec![EstimatorKind::OneStep, EstimatorKind::Plugin];
    let sim = run_simulation(&cfg).unwrap();
    let spec = DgpSpec {
        family: Family::DiscreteReference,
        knob: Knob::None,
        n: 0,
        seed: 0,
    };
    serde_json::to_string_pretty(&(estimate, late, sim, spec)).unwrap()
}

fn c12_determinism() -> Outcome {
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(reports_json)
    };
    let one = in_pool(1);
    let eight = in_pool(8);
    outcome(
        one == eight,
        format!("{} bytes of JSON, 1 vs 8 threads identical: {}", one.len(), one == eight),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("identification cross-check", c01_identification),
        ("expansion identity and quadratic remainder", c02_expansion),
        ("mean-zero influence function", c03_mean_zero),
        ("double robustness of the remainder", c04_double_robustness),
        ("reduction to AIPW under full observation", c05_aipw),
        ("Wald coverage", c06_coverage),
        ("root-n bias with n^-1/4 nuisances", c07_root_n),
        ("robustness simulation", c08_robust_simulation),
        ("complier effect", c09_late),
        ("empirical-process term", c10_empirical_process),
        ("one-step versus plug-in", c11_onestep_vs_plugin),
        ("thread-count determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {:>2} {:<44} {} ({}; {:.1} s)",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
