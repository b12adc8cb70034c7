//! Perturbed best response choice maps.
//!
//! A choice map sends a payoff vector `p` to a population state on the simplex.
//! Two parameterizations coexist: a deterministic perturbation `Q`, where
//! `C(p) = argmax_{z in int X} z'p - Q(z)`, and i.i.d. additive payoff noise.
//! The logit rule belongs to both (negative entropy, Gumbel noise).

mod noise;
mod perturbation;
mod solver;

use std::ops::Deref;

pub use noise::{mc_choice, NoiseChoice, NoiseFamily, NoiseModel, EULER_GAMMA};
pub use perturbation::{
    BasePerturbation, LogBarrier, NegEntropy, Perturbation, PerturbationKind, PerturbationModel,
};
pub use solver::{solve_choice, solve_choice_from, stationarity_residual, DEFAULT_TOL, MAX_NEWTON_ITERS};

use crate::error::{Error, Result};

/// Net rewards per strategy, `p = r - c̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffVector(Vec<f64>);

impl PayoffVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("payoff entries must be finite"));
        }
        Ok(Self(p))
    }

    /// `reward - cost_diff`, entrywise.
    pub fn net(reward: &[f64], cost_diff: &[f64]) -> Result<Self> {
        if reward.len() != cost_diff.len() {
            return Err(Error::param("reward and cost vectors differ in length"));
        }
        Self::new(reward.iter().zip(cost_diff).map(|(r, c)| r - c).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PayoffVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Logit choice `C_i = exp(p_i/μ) / sum exp(p_l/μ)`, overflow-safe.
pub fn logit_choice(p: &[f64], mu: f64) -> Result<Vec<f64>> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::param(format!("noise level mu must be positive, got {mu}")));
    }
    if p.is_empty() || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("payoff must be non-empty and finite"));
    }
    Ok(softmax(p, mu))
}

fn softmax(p: &[f64], mu: f64) -> Vec<f64> {
    let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = p.iter().map(|v| ((v - m) / mu).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// `μ ln sum exp(p_l/μ)`, the perturbed maximum of the logit rule.
pub fn log_sum_exp(p: &[f64], mu: f64) -> f64 {
    let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + mu * p.iter().map(|v| ((v - m) / mu).exp()).sum::<f64>().ln()
}

/// Anything that maps payoffs to a population state.
pub trait ChoiceMap: Send + Sync {
    /// `C(p)`. `warm` is a hint (e.g. the previous maximizer) and never changes
    /// the result beyond solver tolerance.
    fn choose(&self, p: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>>;

    /// δ-storage `S(x, p)` when the map comes from a known perturbation.
    fn storage(&self, _x: &[f64], _p: &[f64]) -> Option<f64> {
        None
    }
}

impl ChoiceMap for PerturbationModel {
    fn choose(&self, p: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        match self.kind() {
            PerturbationKind::Logit { mu } => {
                if p.len() != self.n() {
                    return Err(Error::param("payoff length does not match strategy count"));
                }
                logit_choice(p, *mu)
            }
            _ => solve_choice_from(self, p, DEFAULT_TOL, warm),
        }
    }

    fn storage(&self, x: &[f64], p: &[f64]) -> Option<f64> {
        delta_storage(self, x, p).ok()
    }
}

impl ChoiceMap for NoiseChoice {
    fn choose(&self, p: &[f64], _warm: Option<&[f64]>) -> Result<Vec<f64>> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("payoff entries must be finite"));
        }
        Ok(self.probabilities(p))
    }
}

/// The choice behaviour of a population: a perturbation model or a noise model.
#[derive(Debug, Clone)]
pub enum ChoiceRule {
    Perturbed(PerturbationModel),
    Noise(NoiseChoice),
}

impl ChoiceRule {
    pub fn logit(mu: f64, n: usize) -> Result<Self> {
        Ok(ChoiceRule::Perturbed(PerturbationModel::logit(mu, n)?))
    }

    pub fn noise(model: NoiseModel) -> Self {
        ChoiceRule::Noise(NoiseChoice::new(model))
    }

    pub fn perturbation(&self) -> Option<&PerturbationModel> {
        match self {
            ChoiceRule::Perturbed(m) => Some(m),
            ChoiceRule::Noise(_) => None,
        }
    }
}

impl ChoiceMap for ChoiceRule {
    fn choose(&self, p: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        match self {
            ChoiceRule::Perturbed(m) => m.choose(p, warm),
            ChoiceRule::Noise(m) => m.choose(p, warm),
        }
    }

    fn storage(&self, x: &[f64], p: &[f64]) -> Option<f64> {
        self.perturbation().and_then(|m| m.storage(x, p))
    }
}

impl PerturbationModel {
    /// `max_{z in int X} z'p - Q(z)` and its maximizer.
    pub fn perturbed_max(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.kind() {
            PerturbationKind::Logit { mu } => Ok((log_sum_exp(p, *mu), logit_choice(p, *mu)?)),
            _ => {
                let y = solve_choice(self, p, DEFAULT_TOL)?;
                let v = dot(&y, p) - self.value(&y);
                Ok((v, y))
            }
        }
    }
}

/// δ-storage `S(x, p) = max_z (z'p - Q(z)) - (x'p - Q(x))`.
///
/// Zero exactly at `x = C(p)`. Boundary points are accepted when `Q` extends
/// continuously to the boundary (negative entropy, with `0 ln 0 = 0`).
pub fn delta_storage(model: &PerturbationModel, x: &[f64], p: &[f64]) -> Result<f64> {
    let n = model.n();
    if x.len() != n || p.len() != n {
        return Err(Error::param("state and payoff must match the strategy count"));
    }
    if x.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::domain("state must lie in the simplex"));
    }
    let interior = x.iter().all(|&v| v > 0.0);
    if !interior && !model.extends_to_boundary() {
        return Err(Error::domain("this perturbation is only defined on the interior of the simplex"));
    }
    match model.kind() {
        PerturbationKind::Logit { mu } => {
            // μ KL(x || C(p)), algebraically identical and free of cancellation
            let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = p.iter().map(|v| ((v - m) / mu).exp()).sum::<f64>().ln();
            let mut acc = 0.0;
            for (&xi, &pi) in x.iter().zip(p) {
                if xi > 0.0 {
                    let log_y = (pi - m) / mu - lse;
                    acc += xi * (xi.ln() - log_y);
                }
            }
            Ok(mu * acc)
        }
        _ => {
            let (best, _) = model.perturbed_max(p)?;
            Ok(best - (dot(x, p) - model.value(x)))
        }
    }
}

/// Directional quadratic form `d' ∇_p C(p) d` by central differences with step
/// `h = 1e-5 (1 + |p|_inf)`.
pub fn choice_sensitivity<M: ChoiceMap + ?Sized>(map: &M, p: &[f64], direction: &[f64]) -> Result<f64> {
    if p.len() != direction.len() {
        return Err(Error::param("direction and payoff differ in length"));
    }
    let pmax = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = 1e-5 * (1.0 + pmax);
    choice_sensitivity_with_step(map, p, direction, h)
}

pub fn choice_sensitivity_with_step<M: ChoiceMap + ?Sized>(
    map: &M,
    p: &[f64],
    direction: &[f64],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let plus: Vec<f64> = p.iter().zip(direction).map(|(a, d)| a + h * d).collect();
    let minus: Vec<f64> = p.iter().zip(direction).map(|(a, d)| a - h * d).collect();
    for ((a, b), d) in plus.iter().zip(&minus).zip(direction) {
        if *d != 0.0 && a == b {
            return Err(Error::param("finite-difference step underflows at this payoff scale"));
        }
    }
    let center = map.choose(p, None)?;
    let cp = map.choose(&plus, Some(&center))?;
    let cm = map.choose(&minus, Some(&center))?;
    Ok(direction
        .iter()
        .zip(cp.iter().zip(&cm))
        .map(|(d, (a, b))| d * (a - b))
        .sum::<f64>()
        / (2.0 * h))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests;
