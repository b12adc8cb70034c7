use super::*;
use crate::choice::{delta_storage, logit_choice, ChoiceRule};
use crate::dynamics::{endemic_equilibrium, integrate, ClosedLoopState, HVariant, TrajectoryPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn example2() -> EpidemicParams {
    EpidemicParams::new(0.1, 0.005, 0.0, vec![0.15, 0.19], vec![0.2, 0.0]).unwrap()
}

fn eta() -> f64 {
    0.005 / 0.105
}

#[test]
fn storage_zero_at_equilibrium() {
    let ep = example2();
    let b = 0.17;
    let (i, r) = endemic_equilibrium(b, &ep).unwrap();
    let s = epg_storage(&StorageInputs::from_state(i, r, b, b, 3.0), &ep).unwrap();
    assert!(s.abs() < 1e-16, "{s}");
}

#[test]
fn redesign_start_storage() {
    let ep = example2();
    let b_old = 0.15012;
    let (i, r) = endemic_equilibrium(b_old, &ep).unwrap();
    let s = epg_storage(&StorageInputs::from_state(i, r, b_old, 0.1691, 3.0), &ep).unwrap();
    let expect = 9.0 * (0.15012f64 - 0.1691).powi(2) / 2.0;
    assert!((s - expect).abs() < 1e-15);
    assert!((s - 1.621e-3).abs() < 1e-6);
}

#[test]
fn storage_taylor() {
    // η = 1/2 keeps Î well above the 1e-3 perturbation
    let ep = EpidemicParams::new(0.1, 0.1, 0.0, vec![0.2, 0.5], vec![0.2, 0.0]).unwrap();
    let b = 0.4;
    let ih = 0.5 * (b - 0.1);
    let rh = 0.5 * (b - 0.1);
    let si = StorageInputs { infect: ih + 1e-3, recov: rh, aggregate: b, beta_bar: b, upsilon: 3.0 };
    let s = epg_storage(&si, &ep).unwrap();
    let taylor = 1e-6 / (2.0 * ih);
    assert!((s / taylor - 1.0).abs() < 0.1, "{s} vs {taylor}");
    // the recovered term is an exact quadratic
    let si = StorageInputs { infect: ih, recov: rh + 0.01, aggregate: b, beta_bar: b, upsilon: 3.0 };
    assert!((epg_storage(&si, &ep).unwrap() - 1e-4 / 0.2).abs() < 1e-15);
}

#[test]
fn storage_domain() {
    let ep = example2();
    let si = StorageInputs { infect: 0.0, recov: 0.1, aggregate: 0.17, beta_bar: 0.17, upsilon: 3.0 };
    assert!(matches!(epg_storage(&si, &ep), Err(Error::Domain(_))));
    let si = StorageInputs { infect: 0.01, recov: 0.1, aggregate: 0.1, beta_bar: 0.17, upsilon: 3.0 };
    assert!(matches!(epg_storage(&si, &ep), Err(Error::Domain(_))));
}

#[test]
fn pi_at_zero_and_negative() {
    let ep = example2();
    assert_eq!(pi_upsilon(0.0, 0.1691, 3.0, &ep, 1e-8).unwrap(), 1.0);
    assert!(matches!(pi_upsilon(-1e-3, 0.1691, 3.0, &ep, 1e-8), Err(Error::Parameter(_))));
}

#[test]
fn pi_monotone_in_alpha_and_upsilon() {
    let ep = example2();
    let alphas = [1e-6, 1e-5, 1e-4, 4e-4, 1e-3, 1e-2];
    let mut prev = 1.0;
    for a in alphas {
        let v = pi_upsilon(a, 0.1691, 3.0, &ep, 1e-8).unwrap();
        assert!(v >= prev - 1e-9, "alpha {a}: {v} < {prev}");
        prev = v;
    }
    for a in alphas {
        let mut prev = f64::INFINITY;
        for u in [0.5, 1.0, 2.0, 3.0, 5.0, 10.0] {
            let v = pi_upsilon(a, 0.1691, u, &ep, 1e-8).unwrap();
            assert!(v <= prev + 1e-9, "alpha {a}, upsilon {u}");
            prev = v;
        }
    }
}

// direct search of the sublevel set on a (ℬ, 𝓘) grid with 𝓡 at its target
fn brute_pi(alpha: f64, beta_bar: f64, upsilon: f64, ep: &EpidemicParams) -> f64 {
    let mut best = 0.0f64;
    let nb = 1500;
    for k in 0..=nb {
        let b = 0.1 + 1e-6 + (0.19 - 0.1 - 1e-6) * k as f64 / nb as f64;
        let rh = (1.0 - eta()) * (b - 0.1);
        let ih = eta() * (b - 0.1);
        let ni = 1500;
        for j in 0..=ni {
            let infect = ih * (1.0 + 3.0 * j as f64 / ni as f64);
            let si = StorageInputs { infect, recov: rh, aggregate: b, beta_bar, upsilon };
            if epg_storage(&si, ep).unwrap() <= alpha {
                best = best.max(infect / b);
            }
        }
    }
    best / (eta() * (1.0 - 0.1 / beta_bar))
}

#[test]
fn pi_matches_brute_force() {
    let ep = example2();
    for (a, u) in [(1e-4, 3.0), (4e-4, 3.0), (1e-3, 1.0)] {
        let v = pi_upsilon(a, 0.1691, u, &ep, 1e-8).unwrap();
        let brute = brute_pi(a, 0.1691, u, &ep);
        assert!(v >= brute - 1e-9, "{v} < {brute}");
        assert!(v - brute < 5e-3, "{v} vs {brute}");
    }
}

#[test]
fn sublevel_points_respect_pi() {
    let ep = example2();
    let (alpha, bb, u) = (5e-4, 0.1691, 3.0);
    let pi = pi_upsilon(alpha, bb, u, &ep, 1e-8).unwrap();
    let i_bar = eta() * (1.0 - 0.1 / bb);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut inside = 0;
    while inside < 1000 {
        let b = 0.1 + 1e-6 + rng.random::<f64>() * (0.09 - 1e-6);
        let ih = eta() * (b - 0.1);
        let rh = (1.0 - eta()) * (b - 0.1);
        let si = StorageInputs {
            infect: ih * (0.2 + 2.5 * rng.random::<f64>()),
            recov: rh + 0.02 * (rng.random::<f64>() - 0.5),
            aggregate: b,
            beta_bar: bb,
            upsilon: u,
        };
        if epg_storage(&si, &ep).unwrap() <= alpha {
            inside += 1;
            assert!(si.infect / b / i_bar <= pi + 1e-8);
        }
    }
}

#[test]
fn b_storage_cases() {
    let ep = example2();
    let m = PerturbationModel::logit(1.0, 2).unwrap();
    let r_o = [6.018, 0.0];
    let x0 = logit_choice(&[6.018 - 0.2, 0.0], 1.0).unwrap();
    assert!((x0[0] - 0.997).abs() < 5e-4);
    assert_eq!(b_storage(&r_o, &r_o, &x0, 0.0, &m, &ep).unwrap(), 0.0);

    let r_bar = [0.28744, 0.0];
    let v = b_storage(&r_o, &r_bar, &x0, 0.0, &m, &ep).unwrap();
    let direct = delta_storage(&m, &x0, &[0.28744 - 0.2, 0.0]).unwrap();
    assert!(v > 0.0);
    assert!((v - direct).abs() < 1e-8, "{v} vs {direct}");

    let shifted_o = [6.018 + 0.7, 0.7];
    let shifted_bar = [0.28744 + 0.7, 0.7];
    let w = b_storage(&shifted_o, &shifted_bar, &x0, 0.0, &m, &ep).unwrap();
    assert!((w - v).abs() < 1e-12);

    assert!(matches!(b_storage(&r_o, &r_bar, &[0.9, 0.1], 0.0, &m, &ep), Err(Error::Contract(_))));
}

#[test]
fn flat_trajectory_has_zero_margin() {
    let ep = example2();
    let bb = 0.17;
    let (i, r) = endemic_equilibrium(bb, &ep).unwrap();
    let md = MechanismDesign::new(bb, vec![0.3, 0.0], 3.0, 1.0, HVariant::Plain);
    let mut traj = Trajectory::new(2);
    for k in 0..10 {
        traj.push(TrajectoryPoint {
            t: k as f64,
            state: ClosedLoopState::new(i, r, vec![0.5, 0.5], 0.0),
            aggregate: bb,
            reward: vec![0.3, 0.0],
            cost: 0.15,
            lyapunov: 0.0,
        });
    }
    let rep = anytime_bound_check(&traj, 0.0, &md, &ep).unwrap();
    assert!(rep.pass);
    assert_eq!(rep.pi, 1.0);
    assert!(rep.margin.abs() < 1e-15);
}

#[test]
fn redesign_trajectory_stays_under_bound() {
    let ep = example2();
    let m = PerturbationModel::logit(1.0, 2).unwrap();
    let rule = ChoiceRule::Perturbed(m.clone());
    let r_o = [6.018, 0.0];
    let x0 = logit_choice(&[6.018 - 0.2, 0.0], 1.0).unwrap();
    let b0 = ep.aggregate(&x0);
    let (i0, rr0) = endemic_equilibrium(b0, &ep).unwrap();
    let r1 = 0.287441;
    let x1 = 1.0 / (1.0 + (-(r1 - 0.2f64)).exp());
    let bb = 0.15 * x1 + 0.19 * (1.0 - x1);
    let md = MechanismDesign::new(bb, vec![r1, 0.0], 3.0, 1.0, HVariant::Plain);
    let alpha = b_storage(&r_o, &md.r_bar, &x0, 0.0, &m, &ep).unwrap() + 4.5 * (b0 - bb).powi(2);
    let traj = integrate(&ClosedLoopState::new(i0, rr0, x0, 0.0), &ep, &md, &rule, 1500.0, 0.1).unwrap();
    assert!((traj.points[0].lyapunov - alpha).abs() < 1e-10);
    let rep = anytime_bound_check(&traj, alpha, &md, &ep).unwrap();
    assert!(rep.pass, "{rep:?}");
}
