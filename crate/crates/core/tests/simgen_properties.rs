use std::sync::Arc;

use mexp_core::learners::{LearnerKind, LearnerSpec, TrueNuisances};
use mexp_core::oracle_lab::{derive_nuisances, remainder, DiscreteLaw, NuisanceMask, NuisanceTables};
use mexp_core::simgen::*;
use mexp_core::simulation::{run_simulation, SimConfig};
use mexp_core::stats::ols_slope;

/// Tabulates any nuisance functions on a law's support.
fn tabulate(law: &DiscreteLaw, t: &dyn TrueNuisances) -> NuisanceTables {
    let xs = &law.x_support;
    let ys = &law.y_support;
    NuisanceTables {
        pi: xs.iter().map(|x| ys.iter().map(|y| t.pi(x, y)).collect()).collect(),
        lambda: xs.iter().map(|x| ys.iter().map(|y| t.lambda(x, y)).collect()).collect(),
        beta: xs.iter().map(|x| (0..law.k()).map(|z| t.beta(x, z)).collect()).collect(),
        gamma: xs.iter().map(|x| t.gamma(x)).collect(),
    }
}

fn oracle_config(knob: Knob, n_grid: Vec<usize>, reps: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::new(Family::DiscreteReference, n_grid, reps, seed);
    cfg.learners = LearnerSpec::uniform(LearnerKind::Oracle);
    cfg.knob = knob;
    cfg
}

#[test]
fn flag_is_independent_of_exposure_given_covariates_and_outcome() {
    for fam in [
        Family::DagA(ContinuousParams::default()),
        Family::DagB(ContinuousParams::default()),
    ] {
        assert!(structural_missingness_spread(&fam).unwrap() < 1e-12);
    }
}

#[test]
fn designs_are_reproducible_and_shaped() {
    for fam in [
        Family::DagA(ContinuousParams::default()),
        Family::DagB(ContinuousParams::default()),
        Family::IvReference(IvParams::default()),
        Family::DiscreteReference,
    ] {
        let spec = DgpSpec {
            family: fam.clone(),
            knob: Knob::None,
            n: 500,
            seed: 3,
        };
        let (a, truth) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 500);
        a.ensure_valid().unwrap();
        assert_eq!(truth.psi.len(), 2);
        assert_eq!(truth.psi[0].len(), a.outcome_dim());
    }
}

#[test]
fn continuous_truth_is_closed_form() {
    let t = ground_truth(&Family::DagB(ContinuousParams::default())).unwrap();
    assert_eq!(t.source, TruthSource::ClosedForm);
    assert_eq!(t.psi, vec![vec![0.3], vec![0.6]]);
}

#[test]
fn missingness_after_outcome_depends_on_outcome() {
    let data = sample(&Family::DagB(ContinuousParams::default()), 20_000, 5).unwrap();
    let (mut hi, mut lo) = ((0.0, 0.0), (0.0, 0.0));
    for o in &data.samples {
        let slot = if o.outcomes[0] > 0.5 { &mut hi } else { &mut lo };
        slot.0 += f64::from(u8::from(o.observed));
        slot.1 += 1.0;
    }
    assert!(hi.0 / hi.1 > lo.0 / lo.1 + 0.05);
}

#[test]
fn shared_uniform_enforces_monotonicity() {
    let params = IvParams::default();
    for x in [0.0, 1.0] {
        let t = params.potential_table(x);
        assert_eq!(t[1][0], 0.0);
        assert!(((t[0][0] + t[0][1] + t[1][1]) - 1.0).abs() < 1e-15);
    }
    assert_eq!(params.monotone_share(), 1.0);
    let broken = IvParams {
        defiers: 0.1,
        ..IvParams::default()
    };
    assert!((broken.monotone_share() - 0.9).abs() < 1e-12);
}

#[test]
fn exact_nuisances_give_unbiased_estimates() {
    let cfg = oracle_config(
        Knob::SlowRate {
            exponent: f64::INFINITY,
            scale: 1.0,
            nuisances: None,
        },
        vec![2000],
        300,
        12,
    );
    let s = &run_simulation(&cfg).unwrap().summaries[0];
    assert!(s.bias.abs() < 3.0 * s.sd / (300f64).sqrt(), "{s:?}");
}

#[test]
fn product_rate_when_only_pi_and_lambda_are_perturbed() {
    let law = discrete_reference_law().unwrap();
    let truth = derive_nuisances(&law).unwrap();
    let mask = NuisanceMask {
        pi: true,
        lambda: true,
        beta: false,
        gamma: false,
    };
    let rates = RateSpec::uniform(0.1, 2.0, mask);
    let grid = [1000usize, 4000, 16000];
    let exact: Vec<f64> = grid
        .iter()
        .map(|&n| {
            let injected = inject_rate(true_nuisances(&Family::DiscreteReference).unwrap(), n, &rates);
            remainder(&law, &truth, &tabulate(&law, &injected), 1)[0]
        })
        .collect();
    let logs_n: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
    let logs_b: Vec<f64> = exact.iter().map(|b| b.abs().ln()).collect();
    let slope = ols_slope(&logs_n, &logs_b);
    assert!((-0.23..=-0.17).contains(&slope), "slope {slope}");

    let cfg = oracle_config(
        Knob::SlowRate {
            exponent: 0.1,
            scale: 2.0,
            nuisances: Some(mask),
        },
        vec![4000],
        400,
        13,
    );
    let s = &run_simulation(&cfg).unwrap().summaries[0];
    let mc_se = s.sd / (400f64).sqrt();
    assert!((s.bias - exact[1]).abs() < 4.0 * mc_se, "{} vs {}", s.bias, exact[1]);
}

#[test]
fn biased_gamma_matches_its_enumerated_plateau() {
    let law = discrete_reference_law().unwrap();
    let truth = derive_nuisances(&law).unwrap();
    let mut bar = truth.clone();
    // the constant learner averages lambda_1, i.e. P(Z = 1) = 0.5
    bar.gamma = vec![vec![0.5, 0.5]; 2];
    let plateau = remainder(&law, &truth, &bar, 1)[0];
    assert!((plateau + 0.096).abs() < 1e-12);

    let s = &run_simulation(&oracle_config(Knob::BiasGamma, vec![4000], 200, 14))
        .unwrap()
        .summaries[0];
    assert!((s.bias - plateau).abs() < 4.0 * s.sd / (200f64).sqrt(), "{s:?}");
}

#[test]
fn injected_sizes_follow_the_rate() {
    let t: Arc<dyn TrueNuisances> = true_nuisances(&Family::DiscreteReference).unwrap();
    let a = inject_rate(t.clone(), 1000, &RateSpec::uniform(0.25, 1.0, NuisanceMask::ALL));
    let b = inject_rate(t, 16000, &RateSpec::uniform(0.25, 1.0, NuisanceMask::ALL));
    for (x, y) in a.sizes().iter().zip(b.sizes()) {
        assert!((x / y - 2.0).abs() < 1e-12);
    }
}

#[test]
fn knob_json_round_trip() {
    let spec: DgpSpec = serde_json::from_str(
        r#"{"family": {"name": "dag_b", "d": 2}, "knob": {"knob": "slow_rate", "exponent": 0.25}, "n": 10, "seed": 1}"#,
    )
    .unwrap();
    assert!(matches!(spec.knob, Knob::SlowRate { scale, .. } if scale == 1.0));
    let bad = serde_json::from_str::<DgpSpec>(
        r#"{"family": {"name": "dag_b", "dd": 2}, "n": 10, "seed": 1}"#,
    );
    assert!(bad.is_err());
}

#[test]
fn logistic_learners_handle_missingness_after_outcome() {
    use mexp_core::estimator::{crossfit_estimate, CrossFitOptions};
    use mexp_core::learners::{Basis, LearnerSet};
    let data = sample(&Family::DagB(ContinuousParams::default()), 8000, 21).unwrap();
    let learners = LearnerSet::new(LearnerSpec::uniform(LearnerKind::logistic(Basis::Raw)));
    let fit = crossfit_estimate(&data, &learners, &CrossFitOptions::default()).unwrap();
    for (level, truth) in fit.report.levels.iter().zip([0.3, 0.6]) {
        let err = level.psi_hat[0] - truth;
        assert!(err.abs() < 4.0 * level.std_error[0], "{} off by {err}", level.level);
    }
}
