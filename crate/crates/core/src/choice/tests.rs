use super::*;
use proptest::prelude::*;
use std::sync::Arc;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

// analytic logit Jacobian (1/μ)(diag(x) - x x'), as a quadratic form
fn logit_quadratic_form(p: &[f64], mu: f64, d: &[f64]) -> f64 {
    let x = logit_choice(p, mu).unwrap();
    let xd: f64 = x.iter().zip(d).map(|(a, b)| a * b).sum();
    let xdd: f64 = x.iter().zip(d).map(|(a, b)| a * b * b).sum();
    (xdd - xd * xd) / mu
}

#[test]
fn logit_two_strategies() {
    let x = logit_choice(&[0.087, 0.0], 1.0).unwrap();
    assert!((x[0] - 0.5217).abs() < 5e-5);
    assert!((x[1] - 0.4783).abs() < 5e-5);
    assert!((x[0] - 1.0 / (1.0 + (-0.087f64).exp())).abs() < 1e-15);
}

#[test]
fn logit_uniform_and_sharp() {
    let x = logit_choice(&[0.0, 0.0, 0.0], 1.0).unwrap();
    assert!(close(&x, &[1.0 / 3.0; 3], 1e-15));
    let x = logit_choice(&[5.0, 0.0], 0.05).unwrap();
    assert!((1.0 - x[0]).abs() < 1e-40);
    assert!(x[1] > 0.0);
}

#[test]
fn logit_rejects_bad_mu() {
    assert!(matches!(logit_choice(&[1.0, 0.0], 0.0), Err(Error::Parameter(_))));
    assert!(logit_choice(&[1.0, 0.0], -1.0).is_err());
}

#[test]
fn logit_overflow_safe() {
    let x = logit_choice(&[1e4, 0.0], 0.01).unwrap();
    assert_eq!(x[0], 1.0);
    assert!(x.iter().all(|v| v.is_finite()));
}

#[test]
fn solver_matches_logit_closed_form() {
    let m = PerturbationModel::logit(1.0, 2).unwrap();
    let y = solve_choice(&m, &[0.087, 0.0], 1e-12).unwrap();
    let x = logit_choice(&[0.087, 0.0], 1.0).unwrap();
    assert!(close(&x, &y, 1e-12));
}

#[test]
fn solver_handles_extreme_logit() {
    let m = PerturbationModel::logit(0.05, 2).unwrap();
    let y = solve_choice(&m, &[5.0, 0.0], DEFAULT_TOL).unwrap();
    let x = logit_choice(&[5.0, 0.0], 0.05).unwrap();
    assert!((y[1] / x[1] - 1.0).abs() < 1e-8);
}

#[test]
fn solver_grid_oracle_three_strategies() {
    let m = PerturbationModel::logit(1.0, 3).unwrap();
    let p = [1.0, 0.5, 0.0];
    let y = solve_choice(&m, &p, DEFAULT_TOL).unwrap();

    let steps = 1000;
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for i in 1..steps {
        for j in 1..(steps - i) {
            let z = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
            let f: f64 = z.iter().zip(&p).map(|(a, b)| a * b - a * a.ln()).sum();
            if f > best.0 {
                best = (f, z);
            }
        }
    }
    assert!(close(&y, &best.1, 1.0 / steps as f64));
}

#[test]
fn solver_log_barrier_first_order_condition() {
    let m = PerturbationModel::scaled(0.3, BasePerturbation::LogBarrier, 4).unwrap();
    let p = [1.0, -2.0, 0.5, 3.0];
    let y = solve_choice(&m, &p, DEFAULT_TOL).unwrap();
    assert!(stationarity_residual(&m, &p, &y) <= DEFAULT_TOL);
    assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    assert!(y.iter().all(|&v| v > 0.0));
}

#[test]
fn solver_rejects_mismatched_payoff() {
    let m = PerturbationModel::logit(1.0, 3).unwrap();
    assert!(solve_choice(&m, &[1.0, 0.0], DEFAULT_TOL).is_err());
    assert!(solve_choice(&m, &[1.0, 0.0, 0.0], 0.0).is_err());
}

#[derive(Debug)]
struct Quartic;

// Q(z) = sum z^4 / 4 - sum ln z: strictly convex with a blowing-up gradient
impl Perturbation for Quartic {
    fn value(&self, z: &[f64]) -> f64 {
        z.iter().map(|v| v.powi(4) / 4.0 - v.ln()).sum()
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        for (gi, v) in g.iter_mut().zip(z) {
            *gi = v.powi(3) - 1.0 / v;
        }
    }
    fn hessian(&self, z: &[f64], h: &mut nalgebra::DMatrix<f64>) {
        h.fill(0.0);
        for (i, v) in z.iter().enumerate() {
            h[(i, i)] = 3.0 * v * v + 1.0 / (v * v);
        }
    }
}

#[test]
fn custom_perturbation_solves_and_rejects_boundary() {
    let m = PerturbationModel::new(PerturbationKind::Custom(Arc::new(Quartic)), 3).unwrap();
    let p = [0.2, 0.1, -0.4];
    let y = solve_choice(&m, &p, DEFAULT_TOL).unwrap();
    assert!(stationarity_residual(&m, &p, &y) <= DEFAULT_TOL);
    assert!(delta_storage(&m, &y, &p).unwrap().abs() < 1e-8);
    assert!(matches!(delta_storage(&m, &[1.0, 0.0, 0.0], &p), Err(Error::Domain(_))));
}

#[test]
fn solver_restarts_agree() {
    let m = PerturbationModel::scaled(0.7, BasePerturbation::NegEntropy, 3).unwrap();
    let p = [0.3, -1.0, 0.9];
    let y0 = solve_choice(&m, &p, DEFAULT_TOL).unwrap();
    let starts = [[0.8, 0.1, 0.1], [0.01, 0.98, 0.01], [0.2, 0.2, 0.6], [1e-6, 0.5, 0.5 - 1e-6]];
    for s in &starts {
        let y = solve_choice_from(&m, &p, DEFAULT_TOL, Some(s)).unwrap();
        assert!(close(&y, &y0, 10.0 * DEFAULT_TOL));
    }
}

#[test]
fn mc_gumbel_recovers_logit() {
    let noise = NoiseModel::new(NoiseFamily::Gumbel, 1.0).unwrap();
    let x = mc_choice(&noise, &[0.087, 0.0], 1_000_000, 7).unwrap();
    let l = logit_choice(&[0.087, 0.0], 1.0).unwrap();
    assert!((x[0] - l[0]).abs() < 0.002);
    assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn mc_probit_two_strategies() {
    let noise = NoiseModel::new(NoiseFamily::Normal, 1.0).unwrap();
    let x = mc_choice(&noise, &[3.0, 0.0], 1_000_000, 11).unwrap();
    // Φ(3/√2)
    assert!((x[0] - 0.983_052_573_237_655_4).abs() < 0.002);
}

#[test]
fn mc_symmetric_noise_even_split() {
    for fam in [NoiseFamily::Normal, NoiseFamily::Laplace, NoiseFamily::Logistic, NoiseFamily::Cauchy] {
        let noise = NoiseModel::new(fam, 1.0).unwrap();
        let x = mc_choice(&noise, &[0.4, 0.4], 200_000, 3).unwrap();
        assert!((x[0] - 0.5).abs() < 0.005, "{fam:?}: {x:?}");
    }
}

#[test]
fn mc_is_deterministic_per_seed() {
    let noise = NoiseModel::new(NoiseFamily::Laplace, 0.5).unwrap();
    let a = mc_choice(&noise, &[0.1, 0.0, -0.2], 10_000, 99).unwrap();
    let b = mc_choice(&noise, &[0.1, 0.0, -0.2], 10_000, 99).unwrap();
    assert_eq!(a, b);
    assert!(mc_choice(&noise, &[0.1, 0.0], 0, 1).is_err());
}

#[test]
fn mc_error_shrinks_with_samples() {
    let noise = NoiseModel::new(NoiseFamily::Gumbel, 1.0).unwrap();
    let p = [0.5, 0.0, -0.3];
    let l = logit_choice(&p, 1.0).unwrap();
    for (samples, seeds) in [(10_000usize, 0..20u64), (100_000, 20..30), (1_000_000, 30..33)] {
        let count = seeds.end - seeds.start;
        let mut sq = 0.0;
        for seed in seeds {
            let x = mc_choice(&noise, &p, samples, seed).unwrap();
            sq += (x[0] - l[0]).powi(2);
        }
        let rmse = (sq / count as f64).sqrt();
        let sd = (l[0] * (1.0 - l[0]) / samples as f64).sqrt();
        assert!(rmse < 3.0 * sd, "samples {samples}: rmse {rmse} vs sd {sd}");
    }
}

#[test]
fn quadrature_matches_closed_forms() {
    let gumbel = NoiseChoice::new(NoiseModel::new(NoiseFamily::Gumbel, 1.3).unwrap());
    for p in [[0.087, 0.0, 0.0], [2.0, -1.0, 0.5], [-3.0, 0.0, 4.0]] {
        let q = gumbel.choose(&p, None).unwrap();
        let l = logit_choice(&p, 1.3).unwrap();
        assert!(close(&q, &l, 1e-7), "{q:?} vs {l:?}");
    }
    let normal = NoiseChoice::new(NoiseModel::new(NoiseFamily::Normal, 1.0).unwrap());
    let q = normal.choose(&[3.0, 0.0], None).unwrap();
    assert!((q[0] - 0.983_052_573_237_655_4).abs() < 1e-7);
    // no closed form for three-way Cauchy; cross-check against sampling
    let noise = NoiseModel::new(NoiseFamily::Cauchy, 0.8).unwrap();
    let q = NoiseChoice::new(noise).choose(&[0.6, 0.0, -0.2], None).unwrap();
    let s = mc_choice(&noise, &[0.6, 0.0, -0.2], 400_000, 5).unwrap();
    assert!(close(&q, &s, 0.004));
}

#[test]
fn delta_storage_zero_at_choice() {
    let models = [
        PerturbationModel::logit(1.0, 3).unwrap(),
        PerturbationModel::scaled(0.5, BasePerturbation::LogBarrier, 3).unwrap(),
        PerturbationModel::scaled(2.0, BasePerturbation::NegEntropy, 3).unwrap(),
    ];
    let p = [0.4, -0.2, 1.1];
    for m in &models {
        let y = m.choose(&p, None).unwrap();
        assert!(delta_storage(m, &y, &p).unwrap().abs() < 1e-8);
    }
}

#[test]
fn delta_storage_logit_two_routes() {
    let logit = PerturbationModel::logit(1.0, 2).unwrap();
    let generic = PerturbationModel::scaled(1.0, BasePerturbation::NegEntropy, 2).unwrap();
    let x = [0.5, 0.5];
    let p = [0.087, 0.0];
    let a = delta_storage(&logit, &x, &p).unwrap();
    let b = delta_storage(&generic, &x, &p).unwrap();
    assert!((a - b).abs() < 1e-8);
    // direct: softmax value minus x'p - sum x ln x
    let direct = log_sum_exp(&p, 1.0) - (0.5 * 0.087 - 2.0 * 0.5 * 0.5f64.ln());
    assert!((a - direct).abs() < 1e-12);
}

#[test]
fn delta_storage_direct_value() {
    let m = PerturbationModel::logit(1.0, 2).unwrap();
    let v = delta_storage(&m, &[0.9, 0.1], &[0.0, 0.0]).unwrap();
    // ln 2 + 0.9 ln 0.9 + 0.1 ln 0.1
    assert!((v - 0.368_064_207_168_497).abs() < 1e-12);
}

#[test]
fn delta_storage_boundary_convention() {
    let m = PerturbationModel::logit(1.0, 2).unwrap();
    let v = delta_storage(&m, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-12);
    let barrier = PerturbationModel::scaled(1.0, BasePerturbation::LogBarrier, 2).unwrap();
    assert!(delta_storage(&barrier, &[1.0, 0.0], &[0.0, 0.0]).is_err());
}

#[test]
fn sensitivity_matches_logit_jacobian() {
    let m = PerturbationModel::logit(1.0, 2).unwrap();
    let v = choice_sensitivity(&m, &[0.0, 0.0], &[1.0, -1.0]).unwrap();
    // x1 x2 (d1 - d2)^2 at x = (1/2, 1/2)
    assert!((v - 1.0).abs() < 1e-8);
    assert!((v - logit_quadratic_form(&[0.0, 0.0], 1.0, &[1.0, -1.0])).abs() < 1e-8);
}

#[test]
fn sensitivity_scales_inversely_with_mu() {
    let m1 = PerturbationModel::logit(1.0, 2).unwrap();
    let m2 = PerturbationModel::logit(2.0, 2).unwrap();
    // logit with μ=2 at p is the μ=1 map at p/2
    let a = choice_sensitivity(&m2, &[1.0, 0.0], &[1.0, -1.0]).unwrap();
    let b = choice_sensitivity(&m1, &[0.5, 0.0], &[1.0, -1.0]).unwrap();
    assert!((a - 0.5 * b).abs() < 1e-8);
}

#[test]
fn sensitivity_constant_direction_vanishes() {
    let models: Vec<Box<dyn ChoiceMap>> = vec![
        Box::new(PerturbationModel::logit(1.0, 3).unwrap()),
        Box::new(PerturbationModel::scaled(0.4, BasePerturbation::LogBarrier, 3).unwrap()),
        Box::new(NoiseChoice::new(NoiseModel::new(NoiseFamily::Normal, 1.0).unwrap())),
    ];
    for m in &models {
        let v = choice_sensitivity(m.as_ref(), &[0.3, -0.1, 0.8], &[1.0, 1.0, 1.0]).unwrap();
        assert!(v.abs() < 1e-6);
        let w = choice_sensitivity(m.as_ref(), &[0.3, -0.1, 0.8], &[1.0, 0.0, -2.0]).unwrap();
        assert!(w > 0.0);
    }
}

#[test]
fn sensitivity_step_underflow() {
    let m = PerturbationModel::logit(1.0, 2).unwrap();
    let r = choice_sensitivity_with_step(&m, &[1e20, 0.0], &[1.0, -1.0], 1e-5);
    assert!(matches!(r, Err(Error::Parameter(_))));
}

#[test]
fn monotone_aggregate_map() {
    let m = PerturbationModel::logit(1.0, 2).unwrap();
    let beta = [0.15, 0.19];
    let base = [0.287 - 0.2, 0.0];
    let agg = |q: f64| {
        let p: Vec<f64> = beta.iter().zip(&base).map(|(b, r)| q * b + r).collect();
        let x = m.choose(&p, None).unwrap();
        x[0] * beta[0] + x[1] * beta[1]
    };
    let mut prev = agg(-50.0);
    for k in 1..=1000 {
        let q = -50.0 + 0.1 * k as f64;
        let cur = agg(q);
        assert!(cur > prev, "not increasing at q = {q}");
        prev = cur;
    }
}

fn simplex_point(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prop_delta_storage_nonnegative(
        raw in prop::collection::vec(0.001f64..1.0, 3),
        p in prop::collection::vec(-5.0f64..5.0, 3),
        mu in 0.1f64..5.0,
    ) {
        let x = simplex_point(raw);
        let logit = PerturbationModel::logit(mu, 3).unwrap();
        let barrier = PerturbationModel::scaled(mu, BasePerturbation::LogBarrier, 3).unwrap();
        prop_assert!(delta_storage(&logit, &x, &p).unwrap() >= -1e-10);
        prop_assert!(delta_storage(&barrier, &x, &p).unwrap() >= -1e-10);
    }

    #[test]
    fn prop_shift_invariance(
        p in prop::collection::vec(-5.0f64..5.0, 3),
        k in -100.0f64..100.0,
    ) {
        let m = PerturbationModel::scaled(0.8, BasePerturbation::LogBarrier, 3).unwrap();
        let shifted: Vec<f64> = p.iter().map(|v| v + k).collect();
        let a = solve_choice(&m, &p, DEFAULT_TOL).unwrap();
        let b = solve_choice(&m, &shifted, DEFAULT_TOL).unwrap();
        prop_assert!(close(&a, &b, 1e-9));
    }

    #[test]
    fn prop_softmax_gradient_identity(
        p in prop::collection::vec(-3.0f64..3.0, 4),
        mu in 0.2f64..3.0,
    ) {
        let x = logit_choice(&p, mu).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut up = p.clone();
            let mut dn = p.clone();
            up[i] += h;
            dn[i] -= h;
            let g = (log_sum_exp(&up, mu) - log_sum_exp(&dn, mu)) / (2.0 * h);
            prop_assert!((g - x[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn prop_solver_interior_and_stationary(
        p in prop::collection::vec(-10.0f64..10.0, 3),
        mu in 0.1f64..4.0,
    ) {
        let m = PerturbationModel::scaled(mu, BasePerturbation::NegEntropy, 3).unwrap();
        let y = solve_choice(&m, &p, DEFAULT_TOL).unwrap();
        prop_assert!(y.iter().all(|&v| v > 0.0));
        prop_assert!(stationarity_residual(&m, &p, &y) <= DEFAULT_TOL);
        let l = logit_choice(&p, mu).unwrap();
        prop_assert!(close(&y, &l, 1e-9));
    }
}

#[test]
fn delta_storage_nonnegative_sweep() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let logit = PerturbationModel::logit(1.0, 3).unwrap();
    let barrier = PerturbationModel::scaled(0.5, BasePerturbation::LogBarrier, 3).unwrap();
    for k in 0..10_000 {
        let x = simplex_point((0..3).map(|_| rng.random_range(1e-4..1.0)).collect());
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
        let m = if k % 2 == 0 { &logit } else { &barrier };
        assert!(delta_storage(m, &x, &p).unwrap() >= -1e-10);
    }
}
