use super::*;
use crate::choice::{logit_choice, ChoiceRule, NoiseFamily, NoiseModel, PerturbationModel, BasePerturbation};

fn example2() -> EpidemicParams {
    EpidemicParams::new(0.1, 0.005, 0.0, vec![0.15, 0.19], vec![0.2, 0.0]).unwrap()
}

// r1 with r1 * C_1(r1 - 0.2, 0) = budget, by plain bisection on the logistic form
fn oracle_r1(budget: f64) -> f64 {
    let cost = |r: f64| r / (1.0 + (-(r - 0.2)).exp());
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if cost(m) < budget {
            lo = m
        } else {
            hi = m
        }
    }
    0.5 * (lo + hi)
}

fn example2_design() -> (MechanismDesign, f64) {
    let r1 = oracle_r1(0.15);
    let x1 = 1.0 / (1.0 + (-(r1 - 0.2)).exp());
    let b = 0.15 * x1 + 0.19 * (1.0 - x1);
    (MechanismDesign::new(b, vec![r1, 0.0], 3.0, 1.0, HVariant::Plain), b)
}

fn example2_start() -> ClosedLoopState {
    ClosedLoopState::new(0.0158, 0.3170, vec![1.0, 0.0], 0.0)
}

#[test]
fn derived_rates() {
    let ep = EpidemicParams::new(0.1, 0.004, 0.001, vec![0.15, 0.19], vec![0.2, 0.05]).unwrap();
    assert!((ep.sigma() - 0.101).abs() < 1e-15);
    assert!((ep.omega() - 0.005).abs() < 1e-15);
    assert!((ep.eta() - 0.005 / 0.105).abs() < 1e-15);
    let cd = ep.cost_diff();
    assert!((cd[0] - 0.15).abs() < 1e-15 && cd[1] == 0.0);
}

#[test]
fn rejects_bad_parameters() {
    assert!(EpidemicParams::new(0.1, 0.005, 0.0, vec![0.19, 0.15], vec![0.2, 0.0]).is_err());
    assert!(EpidemicParams::new(0.1, 0.005, 0.0, vec![0.15, 0.19], vec![0.0, 0.2]).is_err());
    // beta_1 <= sigma
    assert!(EpidemicParams::new(0.2, 0.005, 0.0, vec![0.15, 0.19], vec![0.2, 0.0]).is_err());
    assert!(EpidemicParams::new(0.1, 0.0, 0.0, vec![0.15, 0.19], vec![0.2, 0.0]).is_err());
    let ep = example2();
    assert!(MechanismDesign::new(0.19, vec![0.0, 0.0], 3.0, 1.0, HVariant::Plain).validate(&ep).is_err());
    assert!(MechanismDesign::new(0.17, vec![-0.1, 0.0], 3.0, 1.0, HVariant::Plain).validate(&ep).is_err());
    assert!(MechanismDesign::new(0.17, vec![0.1, 0.0], 3.0, -1.0, HVariant::Plain).validate(&ep).is_err());
}

#[test]
fn endemic_point_values() {
    let ep = example2();
    let (i, r) = endemic_equilibrium(0.1691, &ep).unwrap();
    assert!((i - 0.0195).abs() < 1e-3 && (r - 0.3887).abs() < 1e-3, "{i} {r}");
    let (i, _) = endemic_equilibrium(0.1598, &ep).unwrap();
    assert!((i - 0.0178).abs() < 5e-4, "{i}");
    let (i, r) = endemic_equilibrium(0.1 + 1e-12, &ep).unwrap();
    assert!(i < 1e-10 && r < 1e-10);
    assert!(matches!(endemic_equilibrium(0.1, &ep), Err(Error::Domain(_))));
    assert!(matches!(endemic_equilibrium(0.05, &ep), Err(Error::Domain(_))));
}

#[test]
fn field_vanishes_at_example2_rest_point() {
    let ep = example2();
    let (md, b) = example2_design();
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let x = logit_choice(&md.payoff(0.0, &ep), 1.0).unwrap();
    let (i, r) = endemic_equilibrium(b, &ep).unwrap();
    let d = vector_field(&ClosedLoopState::new(i, r, x, 0.0), &ep, &md, &rule).unwrap();
    assert!(d.sup_norm() < 1e-3);
    // and in fact to rounding
    assert!(d.sup_norm() < 1e-12, "{d:?}");
}

#[test]
fn field_components_match_formulas() {
    let ep = example2();
    let md = MechanismDesign::new(0.17, vec![0.3, 0.1], 2.0, 1.5, HVariant::Plain);
    let rule = ChoiceRule::logit(0.7, 2).unwrap();
    let s = ClosedLoopState::new(0.03, 0.2, vec![0.4, 0.6], -0.5);
    let d = vector_field(&s, &ep, &md, &rule).unwrap();
    let b = 0.15 * 0.4 + 0.19 * 0.6;
    assert!((d.di - (b * (1.0 - 0.23) - 0.1) * 0.03).abs() < 1e-15);
    assert!((d.dr - (0.1 * 0.03 - 0.005 * 0.2)).abs() < 1e-15);
    let eta = 0.005 / 0.105;
    let ih = eta * (1.0 - 0.1 / b);
    let rh = (1.0 - eta) * (1.0 - 0.1 / b);
    let g = (ih - 0.03) + eta * (0.03f64.ln() - ih.ln()) + 4.0 * (0.17 - b) + b / 0.1 * (0.2 - rh) * (1.0 - eta - 0.2);
    assert!((d.dq - 1.5 * g).abs() < 1e-13);
    let p = [-0.5 * 0.15 + 0.3 - 0.2, -0.5 * 0.19 + 0.1];
    let c = logit_choice(&p, 0.7).unwrap();
    assert!((d.dx[0] - (c[0] - 0.4)).abs() < 1e-15);
}

#[test]
fn static_mechanism_holds_q() {
    let ep = example2();
    let mut md = example2_design().0;
    md.kappa = 0.0;
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let d = vector_field(&ClosedLoopState::new(0.05, 0.1, vec![0.3, 0.7], 2.0), &ep, &md, &rule).unwrap();
    assert_eq!(d.dq, 0.0);
}

#[test]
fn rejects_zero_infected() {
    let ep = example2();
    let md = example2_design().0;
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let r = vector_field(&ClosedLoopState::new(0.0, 0.1, vec![0.3, 0.7], 0.0), &ep, &md, &rule);
    assert!(matches!(r, Err(Error::Domain(_))));
}

#[test]
fn equilibrium_start_stays_put() {
    let ep = example2();
    let md = MechanismDesign::new(0.17, vec![0.5, 0.0], 3.0, 0.0, HVariant::Plain);
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let q = 0.8;
    let x = logit_choice(&md.payoff(q, &ep), 1.0).unwrap();
    let (i, r) = endemic_equilibrium(ep.aggregate(&x), &ep).unwrap();
    let s0 = ClosedLoopState::new(i, r, x, q);
    let opts = IntegrateOptions { early_stop: false, ..Default::default() };
    let traj = integrate_with(&s0, &ep, &md, &rule, 500.0, &opts).unwrap();
    for p in &traj.points {
        let s = &p.state;
        let dev = (s.i - s0.i).abs().max((s.r - s0.r).abs()).max((s.x[0] - s0.x[0]).abs()).max((s.q - q).abs());
        assert!(dev < 1e-8, "t = {}: {dev}", p.t);
    }
}

#[test]
fn early_stop_flags_rest() {
    let ep = example2();
    let md = MechanismDesign::new(0.17, vec![0.5, 0.0], 3.0, 0.0, HVariant::Plain);
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let x = logit_choice(&md.payoff(0.0, &ep), 1.0).unwrap();
    let (i, r) = endemic_equilibrium(ep.aggregate(&x), &ep).unwrap();
    let traj = integrate(&ClosedLoopState::new(i, r, x, 0.0), &ep, &md, &rule, 100.0, 0.05).unwrap();
    let t = traj.equilibrium_at.unwrap();
    assert!((t - 5.0).abs() < 1e-9, "{t}");
    assert_eq!(traj.last().unwrap().t, t);
}

#[test]
fn example2_converges() {
    let ep = example2();
    let (md, b) = example2_design();
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let traj = integrate(&example2_start(), &ep, &md, &rule, 3000.0, 0.05).unwrap();
    let (istar, _) = endemic_equilibrium(b, &ep).unwrap();
    let end = traj.last().unwrap();
    assert!((end.state.i / istar - 1.0).abs() < 0.01);
    assert!((end.cost - 0.15).abs() < 0.002);
    assert!(end.state.q.abs() < 1e-3);
    assert!((end.aggregate - b).abs() < 1e-3);
    assert_eq!(traj.clamp_events, 0);
}

#[test]
fn step_halving() {
    let ep = example2();
    let md = example2_design().0;
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let coarse_opts = IntegrateOptions { dt: 0.05, early_stop: false, ..Default::default() };
    let fine_opts = IntegrateOptions { dt: 0.025, early_stop: false, record_every: 2, ..Default::default() };
    let coarse = integrate_with(&example2_start(), &ep, &md, &rule, 3000.0, &coarse_opts).unwrap();
    let fine = integrate_with(&example2_start(), &ep, &md, &rule, 3000.0, &fine_opts).unwrap();
    assert_eq!(coarse.len(), fine.len());
    let mut worst = 0.0f64;
    for (a, b) in coarse.points.iter().zip(&fine.points) {
        assert!((a.t - b.t).abs() < 1e-9);
        let (ya, yb) = (a.state.to_vec(), b.state.to_vec());
        for (u, v) in ya.iter().zip(&yb) {
            worst = worst.max((u - v).abs());
        }
    }
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn lyapunov_nonincreasing_example2() {
    let ep = example2();
    let md = example2_design().0;
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let traj = integrate(&example2_start(), &ep, &md, &rule, 3000.0, 0.05).unwrap();
    for w in traj.points.windows(2) {
        assert!(w[1].lyapunov <= w[0].lyapunov + 1e-6, "t = {}", w[1].t);
    }
    assert!(traj.points[0].lyapunov > 0.0);
}

#[test]
fn h_variants_share_state_trajectory() {
    let ep = example2();
    let plain = MechanismDesign::new(0.165, vec![0.1, 0.0], 3.0, 1.0, HVariant::Plain);
    let mut nonneg = plain.clone();
    nonneg.h_variant = HVariant::NonnegativeIncentive;
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let a = integrate(&example2_start(), &ep, &plain, &rule, 800.0, 0.05).unwrap();
    let b = integrate(&example2_start(), &ep, &nonneg, &rule, 800.0, 0.05).unwrap();
    assert_eq!(a.len(), b.len());
    for (u, v) in a.points.iter().zip(&b.points) {
        for (s, t) in u.state.to_vec().iter().zip(v.state.to_vec()) {
            assert!((s - t).abs() < 1e-8);
        }
        let shift = u.reward[0] - v.reward[0];
        assert!((u.reward[1] - v.reward[1] - shift).abs() < 1e-12);
        assert!(v.reward.iter().all(|r| *r >= -1e-15));
    }
}

#[test]
fn overshoot_shrinks_with_gain() {
    let ep = example2();
    let (md, b) = example2_design();
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let (istar, _) = endemic_equilibrium(b, &ep).unwrap();
    let peaks: Vec<f64> = [0.0, 1.0, 2.0, 5.0]
        .iter()
        .map(|&k| {
            let mut m = md.clone();
            m.kappa = k;
            integrate(&example2_start(), &ep, &m, &rule, 1500.0, 0.05).unwrap().max_infected() / istar
        })
        .collect();
    assert!(peaks.windows(2).all(|w| w[1] <= w[0]), "{peaks:?}");
}

#[test]
fn other_choice_rules_integrate() {
    let ep = example2();
    let md = example2_design().0;
    let barrier = PerturbationModel::scaled(0.3, BasePerturbation::LogBarrier, 2).unwrap();
    let s0 = ClosedLoopState::new(0.0158, 0.3170, vec![0.9, 0.1], 0.0);
    let t = integrate(&s0, &ep, &md, &barrier, 50.0, 0.1).unwrap();
    assert!(t.points.iter().all(|p| p.lyapunov.is_finite()));
    let probit = ChoiceRule::noise(NoiseModel::new(NoiseFamily::Normal, 1.0).unwrap());
    let t = integrate(&s0, &ep, &md, &probit, 50.0, 0.1).unwrap();
    assert!(t.points.iter().all(|p| p.lyapunov.is_nan()));
    assert!(t.last().unwrap().state.i > 0.0);
}

#[test]
fn csv_layout_and_determinism() {
    let ep = example2();
    let md = example2_design().0;
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let traj = integrate(&example2_start(), &ep, &md, &rule, 10.0, 0.5).unwrap();
    let mut a = Vec::new();
    traj.write_csv(&mut a).unwrap();
    let text = String::from_utf8(a.clone()).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,I,R,S,x_1,x_2,q,B,r_1,r_2,cost,lyapunov");
    assert_eq!(text.lines().count(), 22);
    let again = integrate(&example2_start(), &ep, &md, &rule, 10.0, 0.5).unwrap();
    let mut b = Vec::new();
    again.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn uneven_horizon_ends_exactly() {
    let ep = example2();
    let md = example2_design().0;
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    let traj = integrate(&example2_start(), &ep, &md, &rule, 1.03, 0.1).unwrap();
    assert_eq!(traj.len(), 12);
    assert_eq!(traj.last().unwrap().t, 1.03);
}

#[test]
fn validates_integration_inputs() {
    let ep = example2();
    let md = example2_design().0;
    let rule = ChoiceRule::logit(1.0, 2).unwrap();
    assert!(integrate(&example2_start(), &ep, &md, &rule, 10.0, 0.0).is_err());
    assert!(integrate(&example2_start(), &ep, &md, &rule, -1.0, 0.1).is_err());
    let bad = ClosedLoopState::new(0.5, 0.6, vec![1.0, 0.0], 0.0);
    assert!(integrate(&bad, &ep, &md, &rule, 10.0, 0.1).is_err());
}
