//! Lyapunov storage of the epidemic subsystem and the anytime bound on the
//! infectious fraction.

use serde::{Deserialize, Serialize};

use crate::choice::{dot, PerturbationModel, ChoiceMap};
use crate::dynamics::{EpidemicParams, MechanismDesign, Trajectory};
use crate::error::{Error, Result};

/// Lowest aggregate rate considered above `σ`.
const SIGMA_MARGIN: f64 = 1e-6;
const GRID: usize = 2001;
const PRECONDITION_TOL: f64 = 1e-6;

/// Arguments of the epidemic storage: `𝓘 = ℬI`, `𝓡 = ℬR`, `ℬ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageInputs {
    pub infect: f64,
    pub recov: f64,
    pub aggregate: f64,
    pub beta_bar: f64,
    pub upsilon: f64,
}

impl StorageInputs {
    pub fn from_state(i: f64, r: f64, aggregate: f64, beta_bar: f64, upsilon: f64) -> Self {
        Self { infect: aggregate * i, recov: aggregate * r, aggregate, beta_bar, upsilon }
    }
}

/// `Î = η(ℬ - σ)` and `R̂ = (1 - η)(ℬ - σ)` in the scaled coordinates.
fn scaled_targets(b: f64, ep: &EpidemicParams) -> (f64, f64) {
    let eta = ep.eta();
    let d = b - ep.sigma();
    (eta * d, (1.0 - eta) * d)
}

/// `(𝓘 - Î) + Î ln(Î/𝓘)`, a Bregman divergence of `-ln`.
fn infect_term(infect: f64, target: f64) -> f64 {
    (infect - target) - target * (infect / target).ln()
}

pub fn epg_storage(si: &StorageInputs, ep: &EpidemicParams) -> Result<f64> {
    if !(si.infect > 0.0) {
        return Err(Error::domain("scaled infectious fraction must be positive"));
    }
    if !(si.aggregate > ep.sigma()) {
        return Err(Error::domain(format!(
            "aggregate rate {} must exceed sigma = {}",
            si.aggregate,
            ep.sigma()
        )));
    }
    let (ih, rh) = scaled_targets(si.aggregate, ep);
    let db = si.aggregate - si.beta_bar;
    Ok(infect_term(si.infect, ih)
        + (si.recov - rh).powi(2) / (2.0 * ep.gamma)
        + 0.5 * si.upsilon * si.upsilon * db * db)
}

/// Largest `𝓘 >= target` with `infect_term(𝓘, target) = budget`.
fn max_infect(target: f64, budget: f64, tol: f64) -> f64 {
    if budget <= 0.0 {
        return target;
    }
    let mut lo = target;
    let mut hi = target + budget.max(target);
    while infect_term(hi, target) < budget {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if infect_term(mid, target) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * hi.max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Largest infectious fraction `I = 𝓘/ℬ` in the `α`-sublevel set at a fixed `ℬ`.
fn sup_at(b: f64, alpha: f64, beta_bar: f64, upsilon: f64, ep: &EpidemicParams, tol: f64) -> f64 {
    let budget = alpha - 0.5 * upsilon * upsilon * (b - beta_bar).powi(2);
    if budget < 0.0 {
        return f64::NEG_INFINITY;
    }
    let (ih, _) = scaled_targets(b, ep);
    max_infect(ih, budget, tol) / b
}

/// `π_υ(α) = Ī⁻¹ sup { 𝓘/ℬ : S_EPG(𝓘, 𝓡, ℬ) <= α }`.
///
/// `𝓡` enters only through a square, so it is fixed at its target. The
/// remaining two-dimensional problem is a grid search over `ℬ` polished by
/// golden section, with the inner bound on `𝓘` found by bisection.
pub fn pi_upsilon(alpha: f64, beta_bar: f64, upsilon: f64, ep: &EpidemicParams, tol: f64) -> Result<f64> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    if !(upsilon > 0.0) || !(tol > 0.0) {
        return Err(Error::param("upsilon and tol must be positive"));
    }
    let sigma = ep.sigma();
    if !(beta_bar > sigma) {
        return Err(Error::domain("beta_bar must exceed sigma"));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    let i_bar = ep.eta() * (1.0 - sigma / beta_bar);
    let reach = (2.0 * alpha).sqrt() / upsilon;
    let lo = (sigma + SIGMA_MARGIN).max(beta_bar - reach);
    let hi = ep.beta_max().min(beta_bar + reach);
    if lo > hi {
        return Err(Error::domain("sublevel set does not meet the admissible aggregate range"));
    }
    let f = |b: f64| sup_at(b, alpha, beta_bar, upsilon, ep, tol * 1e-3);

    let h = (hi - lo) / (GRID - 1) as f64;
    let mut best_k = 0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..GRID {
        let v = f(lo + k as f64 * h);
        if v > best {
            best = v;
            best_k = k;
        }
    }
    let a = lo + best_k.saturating_sub(1) as f64 * h;
    let c = (lo + (best_k + 1) as f64 * h).min(hi);
    let (_, v) = golden_max(&f, a, c, tol * 1e-3 * (hi - lo).max(1e-12));
    Ok(best.max(v).max(i_bar) / i_bar)
}

pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let (fa, fb) = (f(a), f(b));
    [(c, fc), (d, fd), (a, fa), (b, fb)]
        .into_iter()
        .fold((a, f64::NEG_INFINITY), |acc, (x, v)| if v > acc.1 { (x, v) } else { acc })
}

/// `S(x(0), p(0))` after switching the stationary reward from `r°` to `r̄`
/// while the population sits at the equilibrium of `r°`:
/// `max_z(z'p̄ - Q) - max_z(z'p° - Q) - x0'(r̄ - r°)`.
pub fn b_storage(
    r_o: &[f64],
    r_bar: &[f64],
    x0: &[f64],
    q0: f64,
    model: &PerturbationModel,
    ep: &EpidemicParams,
) -> Result<f64> {
    let n = ep.n();
    if r_o.len() != n || r_bar.len() != n || x0.len() != n {
        return Err(Error::param("reward and state vectors must match the strategy count"));
    }
    let cd = ep.cost_diff();
    let payoff = |r: &[f64]| -> Vec<f64> {
        (0..n).map(|i| q0 * ep.beta[i] + r[i] - cd[i]).collect()
    };
    let p_o = payoff(r_o);
    let p_bar = payoff(r_bar);
    let prior = model.choose(&p_o, Some(x0))?;
    let gap = prior.iter().zip(x0).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
    if gap > PRECONDITION_TOL {
        return Err(Error::Contract(format!(
            "x0 is not the equilibrium choice of the prior reward (gap {gap:e})"
        )));
    }
    let (m_bar, _) = model.perturbed_max(&p_bar)?;
    let (m_o, _) = model.perturbed_max(&p_o)?;
    let dr: Vec<f64> = r_bar.iter().zip(r_o).map(|(a, b)| a - b).collect();
    Ok((m_bar - m_o - dot(x0, &dr)).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub alpha: f64,
    pub pi: f64,
    pub i_bar: f64,
    pub bound: f64,
    pub max_infected: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Compares `max_t I(t)` with `Ī π_υ(α)`.
pub fn anytime_bound_check(
    traj: &Trajectory,
    alpha: f64,
    design: &MechanismDesign,
    ep: &EpidemicParams,
) -> Result<BoundReport> {
    let pi = pi_upsilon(alpha, design.beta_bar, design.upsilon, ep, 1e-8)?;
    let i_bar = ep.eta() * (1.0 - ep.sigma() / design.beta_bar);
    let bound = i_bar * pi;
    let max_infected = traj.max_infected();
    let margin = bound - max_infected;
    Ok(BoundReport { alpha, pi, i_bar, bound, max_infected, margin, pass: max_infected <= bound + 1e-6 })
}

#[cfg(test)]
mod tests;
