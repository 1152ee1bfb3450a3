use mexp_core::data::{Dataset, ObservedSample};
use mexp_core::learners::{Basis, LearnerKind, LearnerSet, LearnerSpec};
use mexp_core::nuisance::fit_all;
use mexp_core::oracle_lab::{derive_nuisances, sample_from};
use mexp_core::simgen::discrete_reference_law;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy_data(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let x = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            // near-deterministic missingness and exposure push fits to the edges
            let observed = i < 2 || (i > 3 && x[0] > -2.5);
            let z = if i % 3 == 0 { 2 } else { usize::from(x[1] > 0.0) };
            let y = vec![x[0] * 4.0 + rng.gen_range(-0.1..0.1)];
            ObservedSample::new(x, observed.then_some(z), y)
        })
        .collect();
    Dataset::with_default_names(samples, vec!["0".into(), "1".into(), "2".into()])
}

fn learner_kinds() -> impl Strategy<Value = LearnerKind> {
    prop_oneof![
        Just(LearnerKind::logistic(Basis::Raw)),
        Just(LearnerKind::logistic(Basis::Quadratic)),
        Just(LearnerKind::kernel()),
        Just(LearnerKind::Constant),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_respect_clipping_bounds(
        seed in any::<u64>(),
        kind in learner_kinds(),
        eps in 0.005f64..0.1,
        nested in any::<bool>(),
    ) {
        let data = noisy_data(seed, 80);
        let mut spec = LearnerSpec::uniform(kind);
        spec.nested_split = nested;
        let model = match fit_all(&data, &LearnerSet::new(spec), eps, seed, None) {
            Ok(m) => m,
            Err(e) => {
                // nested halves can lose a level; that must be reported, not hidden
                prop_assert!(nested, "{e}");
                return Ok(());
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..50 {
            let x = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
            let y = [rng.gen_range(-30.0..30.0)];
            let v = model.evaluate(&x, &y);
            prop_assert!(v.pi >= eps && v.pi <= 1.0 - eps);
            prop_assert!((v.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(v.gamma.iter().all(|g| *g >= eps - 1e-15 && *g <= 1.0 - eps + 1e-15));
            prop_assert!((v.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // floored at eps / k before renormalizing
            let floor = eps / 3.0;
            prop_assert!(v.lambda.iter().all(|l| *l >= floor / (1.0 + 3.0 * floor) - 1e-15));
            prop_assert!(v.beta.iter().flatten().all(|b| b.is_finite()));
        }
    }
}

#[test]
fn kernel_propensity_recovers_reference_gamma() {
    let law = discrete_reference_law().unwrap();
    let truth = derive_nuisances(&law).unwrap();
    let data = sample_from(&law, 5000, 3);
    let learners = LearnerSet::new(LearnerSpec::uniform(LearnerKind::kernel()));
    let model = fit_all(&data, &learners, 0.01, 0, None).unwrap();
    let mse: f64 = data
        .samples
        .iter()
        .map(|o| {
            let x = o.covariates[0] as usize;
            let (g, _) = model.second_stage.gamma(&o.covariates);
            (g[1] - truth.gamma[x][1]).powi(2)
        })
        .sum::<f64>()
        / data.n() as f64;
    assert!(mse.sqrt() < 0.05, "rms error {}", mse.sqrt());
}
