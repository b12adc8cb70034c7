//! The planner's design problems: the stationary mechanism state `q̄` and the
//! budget-constrained optimal reward `r*`.

mod nelder_mead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{choice_sensitivity, ChoiceMap, ChoiceRule};
use crate::dynamics::{EpidemicParams, HVariant, MechanismDesign};
use crate::error::{Error, Result};

pub use nelder_mead::{nelder_mead, NelderMeadOptions};

pub const DESIGN_TOL: f64 = 1e-8;
const Q_LIMIT: f64 = 1e6;
const MAX_ROOT_ITERS: usize = 300;
const MULTI_STARTS: usize = 12;
const START_SEED: u64 = 0x5eed;

/// `q ↦ β'C(qβ + r̄ - c̃)`.
pub fn aggregate_at<M: ChoiceMap + ?Sized>(
    q: f64,
    r_bar: &[f64],
    ep: &EpidemicParams,
    rule: &M,
) -> Result<f64> {
    let p = stationary_payoff(q, r_bar, ep);
    Ok(ep.aggregate(&rule.choose(&p, None)?))
}

fn stationary_payoff(q: f64, r_bar: &[f64], ep: &EpidemicParams) -> Vec<f64> {
    let cd = ep.cost_diff();
    (0..ep.n()).map(|i| q * ep.beta[i] + r_bar[i] - cd[i]).collect()
}

/// Unique `q̄` with `β'C(q̄β + r̄ - c̃) = β̄`.
///
/// The map is increasing in `q`, so a bracket is grown by doubling and the
/// root polished by Newton steps that fall back to bisection whenever they
/// leave the bracket.
pub fn solve_qbar<M: ChoiceMap + ?Sized>(
    beta_bar: f64,
    r_bar: &[f64],
    ep: &EpidemicParams,
    rule: &M,
    tol: f64,
) -> Result<f64> {
    if r_bar.len() != ep.n() {
        return Err(Error::param("r_bar length does not match strategy count"));
    }
    if !(beta_bar > ep.beta_min() && beta_bar < ep.beta_max()) {
        return Err(Error::param(format!(
            "beta_bar = {beta_bar} must lie strictly between {} and {}",
            ep.beta_min(),
            ep.beta_max()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    let f = |q: f64| aggregate_at(q, r_bar, ep, rule).map(|b| b - beta_bar);
    let f0 = f(0.0)?;
    if f0.abs() <= tol {
        return Ok(0.0);
    }
    // f increasing: f0 < 0 means the root lies at positive q
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let (mut lo, mut hi, flo, fhi);
    let mut step = 1.0;
    let mut prev = (0.0, f0);
    loop {
        let q = dir * step;
        let v = f(q)?;
        if v.abs() <= tol {
            return Ok(q);
        }
        if (v > 0.0) == (dir > 0.0) {
            if dir > 0.0 {
                (lo, flo, hi, fhi) = (prev.0, prev.1, q, v);
            } else {
                (lo, flo, hi, fhi) = (q, v, prev.0, prev.1);
            }
            break;
        }
        prev = (q, v);
        step *= 2.0;
        if step > Q_LIMIT {
            return Err(Error::Infeasible(format!(
                "no bracket for q-bar within |q| <= {Q_LIMIT:e}; beta_bar may be unreachable"
            )));
        }
    }
    debug_assert!(flo < 0.0 && fhi > 0.0);

    let mut q = if fhi - flo > 0.0 { lo - flo * (hi - lo) / (fhi - flo) } else { 0.5 * (lo + hi) };
    let dir_vec = ep.beta.clone();
    for _ in 0..MAX_ROOT_ITERS {
        let v = f(q)?;
        if v.abs() <= tol {
            return Ok(q);
        }
        if v < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        if hi - lo <= f64::EPSILON * (1.0 + q.abs()) {
            return Ok(q);
        }
        let slope = choice_sensitivity(rule, &stationary_payoff(q, r_bar, ep), &dir_vec).unwrap_or(0.0);
        let newton = q - v / slope;
        q = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    let residual = f(q)?.abs();
    Err(Error::Solver { iterations: MAX_ROOT_ITERS, residual, last_iterate: vec![q] })
}

/// Reward budget problem `min β'C(r - c̃)` s.t. `r'C(r - c̃) <= c*`, `r >= 0`.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub ep: EpidemicParams,
    pub rule: ChoiceRule,
    pub budget: f64,
}

impl DesignProblem {
    pub fn new(ep: EpidemicParams, rule: ChoiceRule, budget: f64) -> Result<Self> {
        ep.validate()?;
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::param(format!("budget must be positive, got {budget}")));
        }
        let c1 = ep.cost_diff()[0];
        if budget >= c1 {
            // still well posed under a perturbed rule: nobody ever fully switches
            log::warn!("budget {budget} is not below the largest cost differential {c1}");
        }
        Ok(Self { ep, rule, budget })
    }

    fn eval(&self, r: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        let cd = self.ep.cost_diff();
        let p: Vec<f64> = r.iter().zip(&cd).map(|(a, b)| a - b).collect();
        let x = self.rule.choose(&p, None)?;
        let obj = self.ep.aggregate(&x);
        let cost = r.iter().zip(&x).map(|(a, b)| a * b).sum();
        Ok((obj, cost, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    pub r_star: Vec<f64>,
    pub beta_star: f64,
    pub x_star: Vec<f64>,
    pub cost: f64,
    /// Spread of the objective over the multi-start candidates (0 for the
    /// one-dimensional path).
    pub dispersion: f64,
}

pub fn optimize_reward(dp: &DesignProblem, tol: f64) -> Result<DesignSolution> {
    if !(tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    if dp.ep.n() == 2 {
        if let Some(sol) = two_strategy(dp, tol)? {
            return Ok(sol);
        }
        log::warn!("one-dimensional reduction not monotone here; using the general optimizer");
    }
    general(dp, tol)
}

/// With two strategies only `r_1` matters (`r_2 = 0` is cheapest), and when
/// both objective and cost are monotone in `r_1` the budget is active, so `r_1`
/// is the root of `cost(r_1) = c*`. Returns `None` if monotonicity fails.
fn two_strategy(dp: &DesignProblem, tol: f64) -> Result<Option<DesignSolution>> {
    let eval = |r1: f64| dp.eval(&[r1, 0.0]);
    let mut hi = 1.0;
    while eval(hi)?.1 < dp.budget {
        hi *= 2.0;
        if hi > Q_LIMIT {
            return Err(Error::Infeasible("budget never binds".into()));
        }
    }
    const AUDIT: usize = 200;
    let mut prev = eval(0.0)?;
    for k in 1..=AUDIT {
        let cur = eval(hi * k as f64 / AUDIT as f64)?;
        if cur.0 > prev.0 || cur.1 < prev.1 {
            return Ok(None);
        }
        prev = cur;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)?.1 <= dp.budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * 1e-3 * (1.0 + hi) {
            break;
        }
    }
    let (obj, cost, x) = eval(lo)?;
    Ok(Some(DesignSolution { r_star: vec![lo, 0.0], beta_star: obj, x_star: x, cost, dispersion: 0.0 }))
}

fn general(dp: &DesignProblem, tol: f64) -> Result<DesignSolution> {
    let n = dp.ep.n();
    let spread = dp.ep.beta_max() - dp.ep.beta_min();
    let rho = 10.0 * spread / dp.budget.min(1.0);
    let penalized = |u: &[f64]| -> f64 {
        let r: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
        match dp.eval(&r) {
            Ok((obj, cost, _)) => obj + rho * (cost - dp.budget).max(0.0) + rho * negative_mass(u),
            Err(_) => f64::INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let scale = dp.ep.cost_diff()[0].max(dp.budget);
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for i in 0..n - 1 {
        let mut s = vec![0.0; n];
        s[i] = scale;
        starts.push(s);
    }
    while starts.len() < MULTI_STARTS {
        starts.push((0..n).map(|_| rng.random::<f64>() * 2.0 * scale).collect());
    }

    let opts = NelderMeadOptions { initial_step: 0.5 * scale, f_tol: tol * 1e-2, max_evals: 4000 * n };
    let candidates: Vec<Result<(f64, f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|s| {
            let (u, _) = nelder_mead(&penalized, s, &opts);
            let r = polish(dp, &penalized, u, tol);
            let r = shrink_to_budget(dp, r)?;
            let (obj, _, _) = dp.eval(&r)?;
            Ok((obj, r.iter().sum::<f64>(), r))
        })
        .collect();
    let candidates: Vec<(f64, f64, Vec<f64>)> = candidates.into_iter().collect::<Result<_>>()?;

    let best_obj = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let worst_obj = candidates.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    // ties within tol go to the cheapest reward vector, then to start order
    let chosen = candidates
        .iter()
        .filter(|c| c.0 <= best_obj + tol)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .expect("at least one candidate");
    let (obj, cost, x) = dp.eval(&chosen.2)?;
    Ok(DesignSolution { r_star: chosen.2.clone(), beta_star: obj, x_star: x, cost, dispersion: worst_obj - best_obj })
}

fn negative_mass(u: &[f64]) -> f64 {
    u.iter().map(|v| (-v).max(0.0)).sum()
}

/// Coordinate-wise golden-section sweeps on the penalized objective.
fn polish<F: Fn(&[f64]) -> f64>(dp: &DesignProblem, f: &F, u: Vec<f64>, tol: f64) -> Vec<f64> {
    let mut r: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
    let width = dp.ep.cost_diff()[0].max(dp.budget);
    let mut best = f(&r);
    for _ in 0..20 {
        let before = best;
        for i in 0..r.len() {
            let lo = (r[i] - width).max(0.0);
            let hi = r[i] + width;
            let mut trial = r.clone();
            let g = |v: f64| {
                let mut t = trial.clone();
                t[i] = v;
                -f(&t)
            };
            let (v, fv) = crate::bounds::golden_max(&g, lo, hi, tol * 1e-2);
            if -fv < best {
                trial[i] = v;
                r = trial;
                best = -fv;
            }
        }
        if before - best <= tol * 1e-2 {
            break;
        }
    }
    r
}

/// Largest `s` in `[0, 1]` with `cost(s r) <= c*`.
fn shrink_to_budget(dp: &DesignProblem, r: Vec<f64>) -> Result<Vec<f64>> {
    if dp.eval(&r)?.1 <= dp.budget {
        return Ok(r);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let scaled: Vec<f64> = r.iter().map(|v| v * mid).collect();
        if dp.eval(&scaled)?.1 <= dp.budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(r.iter().map(|v| v * lo).collect())
}

/// Long-run reward spend `r'x` at the closed-loop rest point of `(β̄, r̄)`.
pub fn stationary_cost<M: ChoiceMap + ?Sized>(
    beta_bar: f64,
    r_bar: &[f64],
    h_variant: HVariant,
    ep: &EpidemicParams,
    rule: &M,
    tol: f64,
) -> Result<f64> {
    let q = solve_qbar(beta_bar, r_bar, ep, rule, tol)?;
    let md = MechanismDesign::new(beta_bar, r_bar.to_vec(), 1.0, 1.0, h_variant);
    let x = rule.choose(&md.payoff(q, ep), None)?;
    Ok(md.reward(q, ep).iter().zip(&x).map(|(r, v)| r * v).sum())
}
