use mexp_core::estimator::{crossfit_estimate, CrossFitOptions};
use mexp_core::iv::{late_estimate, late_identify, IvDataset};
use mexp_core::learners::LearnerSet;
use mexp_core::nuisance::{fit_all, floor_and_renormalize};
use mexp_core::oracle_lab::*;
use mexp_core::simgen::{discrete_reference_law, iv_law, IvParams};
use mexp_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::sync::Arc;

fn shape() -> impl Strategy<Value = LawShape> {
    (1usize..=8, 1usize..=2, 2usize..=3, 2usize..=8, 1usize..=2).prop_map(|(nx, d, k, ny, p)| {
        LawShape {
            nx,
            d,
            k,
            ny,
            p,
            eps: 0.05,
        }
    })
}

fn law_from(seed: u64, shape: LawShape) -> DiscreteLaw {
    random_law(&mut ChaCha8Rng::seed_from_u64(seed), shape).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn two_identification_routes_agree(seed in any::<u64>(), shape in shape()) {
        let law = law_from(seed, shape);
        for z in 0..law.k() {
            let a = psi_true(&law, z).unwrap();
            let b = psi_direct(&law, z);
            for (u, v) in a.iter().zip(&b) {
                prop_assert!(rel_close(*u, *v, 1e-10));
            }
        }
    }

    #[test]
    fn influence_function_has_mean_zero(seed in any::<u64>(), shape in shape()) {
        let law = law_from(seed, shape);
        for z in 0..law.k() {
            prop_assert!(eif_mean_zero_check(&law, z).unwrap() < 1e-10);
        }
    }

    #[test]
    fn expansion_identity_for_table_perturbations(
        seed in any::<u64>(),
        shape in shape(),
        t in 0.01f64..0.5,
    ) {
        let law = law_from(seed, shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let dir = Perturbation::random(&law, NuisanceMask::ALL, &mut rng);
        let pb = PerturbedLaw::free(&law, &dir, t).unwrap();
        for z in 0..law.k() {
            let c = vonmises_identity_check(&pb, z);
            prop_assert!(c.residual < 1e-10, "{c:?}");
            // remainder recovered as lhs minus the integral terms
            for j in 0..law.p() {
                let implied = c.lhs[j] - c.integral_pbar[j] + c.integral_p[j];
                prop_assert!((implied - c.remainder[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn expansion_identity_for_law_perturbations(
        seed in any::<u64>(),
        shape in shape(),
        t in 0.01f64..0.5,
    ) {
        let law = law_from(seed, shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdef);
        let dir = LawPerturbation::random(&law, &mut rng);
        let pb = PerturbedLaw::coherent(&law, &dir, t).unwrap();
        for z in 0..law.k() {
            let c = vonmises_identity_check(&pb, z);
            prop_assert!(c.residual < 1e-10, "{c:?}");
            prop_assert!(max_abs(&c.integral_pbar) < 1e-10);
        }
    }

    #[test]
    fn remainder_vanishes_in_the_robust_patterns(
        seed in any::<u64>(),
        shape in shape(),
        t in 0.05f64..1.0,
    ) {
        let law = law_from(seed, shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x123);
        for mask in [
            NuisanceMask { pi: false, lambda: true, beta: true, gamma: false },
            NuisanceMask { pi: true, lambda: false, beta: true, gamma: false },
        ] {
            let dir = Perturbation::random(&law, mask, &mut rng);
            let pb = PerturbedLaw::free(&law, &dir, t).unwrap();
            for z in 0..law.k() {
                prop_assert!(max_abs(&double_robustness_check(&pb, z)) < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_nuisances_reproduce_the_law(seed in any::<u64>(), shape in shape()) {
        let law = law_from(seed, shape);
        let tables = derive_nuisances(&law).unwrap();
        let data = sample_from(&law, 40, seed);
        let learners = LearnerSet::oracle(Arc::new(LawOracle::new(law.clone()).unwrap()));
        let model = match fit_all(&data, &learners, 0.01, 1, None) {
            Ok(m) => m,
            // a tiny sample can miss a level entirely
            Err(Error::DegenerateFit { .. }) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        for x in 0..law.nx() {
            for y in 0..law.ny() {
                let v = model.evaluate(&law.x_support[x], &law.y_support[y]);
                prop_assert!((v.pi - tables.pi[x][y]).abs() < 1e-12);
                // lambda is floored at eps / k, which a random law can undercut
                let lambda = floor_and_renormalize(&tables.lambda[x][y], 0.01 / law.k() as f64);
                for z in 0..law.k() {
                    prop_assert!((v.lambda[z] - lambda[z]).abs() < 1e-12);
                    prop_assert!((v.gamma[z] - tables.gamma[x][z]).abs() < 1e-12);
                    for j in 0..law.p() {
                        prop_assert!((v.beta[z][j] - tables.beta[x][z][j]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn complier_effect_is_shift_and_scale_equivariant(
        first_stage in 0.1f64..0.6,
        effect in -0.2f64..0.5,
        c in -3.0f64..3.0,
        scale in 0.2f64..4.0,
    ) {
        let params = IvParams { first_stage, effect, ..IvParams::default() };
        let law = iv_law(&params).unwrap();
        let theta = late_identify(&law).unwrap();
        prop_assert!((theta - effect).abs() < 1e-10);
        let shifted = law.map_outcomes(|v| vec![v[0], v[1] + c]).unwrap();
        prop_assert!((late_identify(&shifted).unwrap() - theta).abs() < 1e-10);
        let scaled = law.map_outcomes(|v| vec![v[0], v[1] * scale]).unwrap();
        prop_assert!((late_identify(&scaled).unwrap() - scale * theta).abs() < 1e-10);
    }
}

#[test]
fn conditional_independence_gives_flat_lambda() {
    let law = DiscreteLaw::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![vec![0.0], vec![1.0]],
        vec![0.3, 0.7],
        vec![vec![0.0], vec![1.0], vec![2.0]],
        vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.1, 0.3]],
        vec![
            vec![vec![0.1, 0.4, 0.5]; 3],
            vec![vec![0.7, 0.2, 0.1]; 3],
        ],
        vec![vec![0.4, 0.5, 0.6], vec![0.9, 0.8, 0.7]],
    )
    .unwrap();
    let t = derive_nuisances(&law).unwrap();
    for x in 0..2 {
        for y in 0..3 {
            for z in 0..3 {
                assert!((t.lambda[x][y][z] - law.gamma[x][z]).abs() < 1e-15);
            }
        }
    }
    let q = 0.35;
    let flat = DiscreteLaw::new(
        vec!["0".into(), "1".into()],
        vec![vec![0.0]],
        vec![1.0],
        vec![vec![0.0], vec![1.0]],
        vec![vec![0.4, 0.6]],
        vec![vec![vec![1.0 - q, q]; 2]],
        vec![vec![0.5, 0.5]],
    )
    .unwrap();
    for z in 0..2 {
        assert!((psi_true(&flat, z).unwrap()[0] - q).abs() < 1e-15);
    }
}

#[test]
fn reference_law_tables() {
    let law = discrete_reference_law().unwrap();
    let t = derive_nuisances(&law).unwrap();
    for (x, xv) in [0.0, 1.0].iter().enumerate() {
        assert!((t.gamma[x][1] - (0.3 + 0.4 * xv)).abs() < 1e-12);
        for z in 0..2 {
            let m = t.beta[x][z][0] / t.gamma[x][z];
            assert!((m - (0.2 + 0.3 * z as f64 + 0.2 * xv)).abs() < 1e-12);
        }
    }
    assert!((psi_true(&law, 1).unwrap()[0] - 0.6).abs() < 1e-12);
    assert!((psi_true(&law, 0).unwrap()[0] - 0.3).abs() < 1e-12);
    assert!(eif_mean_zero_check(&law, 1).unwrap() < 1e-12);
}

#[test]
fn reference_law_expansion_at_fixed_scale() {
    let law = discrete_reference_law().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dir = Perturbation::random(&law, NuisanceMask::ALL, &mut rng);
    let zero = vonmises_identity_check(&PerturbedLaw::free(&law, &dir, 0.0).unwrap(), 1);
    assert_eq!(max_abs(&zero.lhs), 0.0);
    assert!(max_abs(&zero.rhs) < 1e-15);
    let c = vonmises_identity_check(&PerturbedLaw::free(&law, &dir, 0.1).unwrap(), 1);
    assert!(c.residual < 1e-10);
}

#[test]
fn remainder_nonzero_when_only_pi_is_right() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let law = random_law(&mut rng, LawShape::default()).unwrap();
    let dir = Perturbation::random(
        &law,
        NuisanceMask {
            pi: false,
            lambda: true,
            beta: true,
            gamma: true,
        },
        &mut rng,
    );
    let pb = PerturbedLaw::free(&law, &dir, 0.3).unwrap();
    assert!(double_robustness_check(&pb, 0)[0].abs() > 1e-6);
}

#[test]
fn sampled_cells_match_law_probabilities() {
    let law = discrete_reference_law().unwrap();
    let n = 100_000;
    let data = sample_from(&law, n, 31);
    let cells = law.observed_cells();
    let mut counts = vec![0.0; cells.len()];
    for o in &data.samples {
        let i = cells
            .iter()
            .position(|c| {
                law.x_support[c.x] == o.covariates
                    && law.y_support[c.y] == o.outcomes
                    && c.exposure == o.exposure
            })
            .unwrap();
        counts[i] += 1.0;
    }
    let stat: f64 = cells
        .iter()
        .zip(&counts)
        .map(|(c, o)| (o - n as f64 * c.prob).powi(2) / (n as f64 * c.prob))
        .sum();
    let df = (cells.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    assert!(p_value > 0.001, "chi-square {stat} on {df} df");
    assert_eq!(data, sample_from(&law, n, 31));
}

#[test]
fn refit_on_shifted_response_keeps_the_ratio() {
    let law = iv_law(&IvParams::default()).unwrap();
    let c = 2.5;
    let shifted = law.map_outcomes(|v| vec![v[0], v[1] + c]).unwrap();
    let data = sample_from(&law, 3000, 8);
    let mut moved = data.clone();
    moved.samples.iter_mut().for_each(|o| o.outcomes[1] += c);
    let opts = CrossFitOptions::default();
    let oracle = |l: &DiscreteLaw| LearnerSet::oracle(Arc::new(LawOracle::new(l.clone()).unwrap()));
    let (a, _) = late_estimate(&IvDataset::new(data).unwrap(), &oracle(&law), &opts, 0.01).unwrap();
    let (b, _) = late_estimate(&IvDataset::new(moved.clone()).unwrap(), &oracle(&shifted), &opts, 0.01).unwrap();
    assert!((a.theta_hat - b.theta_hat).abs() < 1e-10);
    assert!((a.denominator - b.denominator).abs() < 1e-12);
    let scaled = law.map_outcomes(|v| vec![v[0], 3.0 * v[1]]).unwrap();
    let mut tripled = sample_from(&law, 3000, 8);
    tripled.samples.iter_mut().for_each(|o| o.outcomes[1] *= 3.0);
    let (s, _) = late_estimate(&IvDataset::new(tripled).unwrap(), &oracle(&scaled), &opts, 0.01).unwrap();
    assert!((s.theta_hat - 3.0 * a.theta_hat).abs() < 1e-10);
    let fit = crossfit_estimate(&moved, &oracle(&shifted), &opts).unwrap();
    assert_eq!(fit.report.n, 3000);
}
