//! Closed loop of the normalized SIRS model, the dynamic payoff mechanism and
//! the perturbed best response dynamic `ẋ = C(p) - x`.

pub(crate) mod integrate;
mod trajectory;

use serde::{Deserialize, Serialize};

pub use integrate::{integrate, integrate_with, IntegrateOptions, Stepper};
pub use trajectory::{Trajectory, TrajectoryPoint};

use crate::choice::ChoiceMap;
use crate::error::{Error, Result};

/// Rates are per day. `beta` must be strictly increasing and `cost` strictly
/// decreasing, so strategy `n` is the riskiest and cheapest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicParams {
    pub gamma: f64,
    pub psi: f64,
    pub theta: f64,
    pub beta: Vec<f64>,
    pub cost: Vec<f64>,
}

impl EpidemicParams {
    pub fn new(gamma: f64, psi: f64, theta: f64, beta: Vec<f64>, cost: Vec<f64>) -> Result<Self> {
        let ep = Self { gamma, psi, theta, beta, cost };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.beta.len();
        if n < 2 {
            return Err(Error::param("need at least two strategies"));
        }
        if self.cost.len() != n {
            return Err(Error::param("beta and cost vectors differ in length"));
        }
        for v in [self.gamma, self.psi, self.theta] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param("rates gamma, psi, theta must be finite and nonnegative"));
            }
        }
        if self.gamma <= 0.0 || self.psi + self.theta <= 0.0 {
            return Err(Error::param("eta must lie strictly between 0 and 1"));
        }
        if self.beta.iter().chain(&self.cost).any(|v| !v.is_finite()) {
            return Err(Error::param("beta and cost entries must be finite"));
        }
        if self.beta.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("transmission rates must be strictly increasing"));
        }
        if self.cost.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::param("intrinsic costs must be strictly decreasing"));
        }
        if self.beta[0] <= self.sigma() {
            return Err(Error::param(format!(
                "smallest transmission rate {} must exceed sigma = {}",
                self.beta[0],
                self.sigma()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn sigma(&self) -> f64 {
        self.gamma + self.theta
    }

    pub fn omega(&self) -> f64 {
        self.psi + self.theta
    }

    pub fn eta(&self) -> f64 {
        self.omega() / (self.omega() + self.gamma)
    }

    /// `c̃_i = c_i - c_n`.
    pub fn cost_diff(&self) -> Vec<f64> {
        let last = self.cost[self.cost.len() - 1];
        self.cost.iter().map(|c| c - last).collect()
    }

    pub fn beta_min(&self) -> f64 {
        self.beta[0]
    }

    pub fn beta_max(&self) -> f64 {
        self.beta[self.beta.len() - 1]
    }

    /// `β'x`.
    pub fn aggregate(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum()
    }
}

/// Nontrivial endemic rest point `(η(1 - σ/β), (1 - η)(1 - σ/β))`.
pub fn endemic_equilibrium(beta: f64, ep: &EpidemicParams) -> Result<(f64, f64)> {
    let sigma = ep.sigma();
    if !(beta > sigma) {
        return Err(Error::domain(format!(
            "transmission rate {beta} <= sigma = {sigma}: no endemic equilibrium"
        )));
    }
    let s = 1.0 - sigma / beta;
    let eta = ep.eta();
    Ok((eta * s, (1.0 - eta) * s))
}

/// How the reward is formed from the mechanism state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HVariant {
    /// `r = qβ + r̄`.
    #[default]
    Plain,
    /// `r = qβ + r̄ - min_i(qβ_i + r̄_i)`, never negative.
    NonnegativeIncentive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismDesign {
    pub beta_bar: f64,
    pub r_bar: Vec<f64>,
    pub upsilon: f64,
    pub kappa: f64,
    #[serde(default)]
    pub h_variant: HVariant,
}

impl MechanismDesign {
    pub fn new(beta_bar: f64, r_bar: Vec<f64>, upsilon: f64, kappa: f64, h_variant: HVariant) -> Self {
        Self { beta_bar, r_bar, upsilon, kappa, h_variant }
    }

    pub fn validate(&self, ep: &EpidemicParams) -> Result<()> {
        if self.r_bar.len() != ep.n() {
            return Err(Error::param("r_bar length does not match strategy count"));
        }
        if !(self.beta_bar > ep.beta_min() && self.beta_bar < ep.beta_max()) {
            return Err(Error::param(format!(
                "beta_bar = {} must lie strictly between {} and {}",
                self.beta_bar,
                ep.beta_min(),
                ep.beta_max()
            )));
        }
        if self.r_bar.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("r_bar must be finite and nonnegative"));
        }
        if !(self.upsilon.is_finite() && self.upsilon > 0.0) {
            return Err(Error::param("upsilon must be positive"));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::param("kappa must be nonnegative"));
        }
        Ok(())
    }

    /// The reward `H(q, r̄)` paid to each strategy.
    pub fn reward(&self, q: f64, ep: &EpidemicParams) -> Vec<f64> {
        let mut r: Vec<f64> = ep.beta.iter().zip(&self.r_bar).map(|(b, rb)| q * b + rb).collect();
        if self.h_variant == HVariant::NonnegativeIncentive {
            let m = r.iter().cloned().fold(f64::INFINITY, f64::min);
            r.iter_mut().for_each(|v| *v -= m);
        }
        r
    }

    /// Net payoff `p = H - c̃`.
    pub fn payoff(&self, q: f64, ep: &EpidemicParams) -> Vec<f64> {
        let cd = ep.cost_diff();
        self.reward(q, ep).iter().zip(&cd).map(|(r, c)| r - c).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopState {
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub x: Vec<f64>,
    pub q: f64,
}

impl ClosedLoopState {
    pub fn new(i: f64, r: f64, x: Vec<f64>, q: f64) -> Self {
        Self { i, r, x, q }
    }

    pub fn susceptible(&self) -> f64 {
        1.0 - self.i - self.r
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.x.len() != n {
            return Err(Error::param("state x has the wrong length"));
        }
        if !(self.i > 0.0 && self.i <= 1.0) {
            return Err(Error::domain(format!("infectious fraction must lie in (0, 1], got {}", self.i)));
        }
        if !(self.r >= 0.0 && self.r <= 1.0) || self.i + self.r > 1.0 + 1e-12 {
            return Err(Error::param("R must lie in [0, 1] with I + R <= 1"));
        }
        if self.x.iter().any(|v| !(*v >= 0.0)) || (self.x.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("x must lie on the simplex"));
        }
        if !self.q.is_finite() {
            return Err(Error::param("q must be finite"));
        }
        Ok(())
    }

    pub(crate) fn to_vec(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.x.len() + 3);
        y.push(self.i);
        y.push(self.r);
        y.extend_from_slice(&self.x);
        y.push(self.q);
        y
    }

    pub(crate) fn from_slice(y: &[f64]) -> Self {
        let n = y.len() - 3;
        Self { i: y[0], r: y[1], x: y[2..2 + n].to_vec(), q: y[2 + n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub di: f64,
    pub dr: f64,
    pub dx: Vec<f64>,
    pub dq: f64,
}

impl StateDerivative {
    pub fn sup_norm(&self) -> f64 {
        self.dx.iter().fold(self.di.abs().max(self.dr.abs()).max(self.dq.abs()), |a, v| a.max(v.abs()))
    }
}

/// Mechanism drift `G`, before the gain `κ`.
pub fn mechanism_drift(i: f64, r: f64, b: f64, ep: &EpidemicParams, md: &MechanismDesign) -> f64 {
    let eta = ep.eta();
    let s = 1.0 - ep.sigma() / b;
    let i_hat = eta * s;
    let r_hat = (1.0 - eta) * s;
    (i_hat - i)
        + eta * (i.ln() - i_hat.ln())
        + md.upsilon * md.upsilon * (md.beta_bar - b)
        + (b / ep.gamma) * (r - r_hat) * (1.0 - eta - r)
}

pub(crate) fn field_into<M: ChoiceMap + ?Sized>(
    y: &[f64],
    ep: &EpidemicParams,
    md: &MechanismDesign,
    rule: &M,
    warm: Option<&[f64]>,
    out: &mut [f64],
) -> Result<Vec<f64>> {
    let n = ep.n();
    let (i, r, q) = (y[0], y[1], y[2 + n]);
    let x = &y[2..2 + n];
    if !(i > 0.0) {
        return Err(Error::domain(format!("infectious fraction must be positive, got {i}")));
    }
    let b = ep.aggregate(x);
    out[0] = (b * (1.0 - i - r) - ep.sigma()) * i;
    out[1] = ep.gamma * i - ep.omega() * r;
    let c = rule.choose(&md.payoff(q, ep), warm)?;
    for k in 0..n {
        out[2 + k] = c[k] - x[k];
    }
    out[2 + n] = if md.kappa == 0.0 { 0.0 } else { md.kappa * mechanism_drift(i, r, b, ep, md) };
    Ok(c)
}

/// `(İ, Ṙ, ẋ, q̇)` of the closed loop.
pub fn vector_field<M: ChoiceMap + ?Sized>(
    s: &ClosedLoopState,
    ep: &EpidemicParams,
    md: &MechanismDesign,
    rule: &M,
) -> Result<StateDerivative> {
    if s.x.len() != ep.n() || md.r_bar.len() != ep.n() {
        return Err(Error::param("state, design and parameters disagree on the strategy count"));
    }
    let y = s.to_vec();
    let mut out = vec![0.0; y.len()];
    field_into(&y, ep, md, rule, None, &mut out)?;
    let n = ep.n();
    Ok(StateDerivative { di: out[0], dr: out[1], dx: out[2..2 + n].to_vec(), dq: out[2 + n] })
}

#[cfg(test)]
mod tests;
