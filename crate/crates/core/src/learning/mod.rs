//! Estimating the noise level `μ` of a one-parameter choice rule `C^μ` from
//! surveys, and choosing a budget-safe target rate while `μ` is uncertain.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::choice::{dot, ChoiceMap, PerturbationModel};
use crate::design::solve_qbar;
use crate::dynamics::EpidemicParams;
use crate::error::{Error, Result};

pub const MU_RANGE: (f64, f64) = (1e-3, 1e3);
const MU_REL_TOL: f64 = 1e-6;
const RANGE_SLACK: f64 = 1e-9;

/// Survey design. The net rewards `r - c̃` offered in the survey span a range
/// of exactly 2, which bounds the variance of a response by 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub net: Vec<f64>,
    pub respondents: usize,
    pub confidence: f64,
    pub cadence_days: f64,
    pub seed: u64,
}

impl SurveyConfig {
    /// Survey from a reward vector; rescales `r - c̃` about its minimum (with a
    /// warning) when its range is not 2.
    pub fn from_reward(
        reward: &[f64],
        cost_diff: &[f64],
        respondents: usize,
        confidence: f64,
        cadence_days: f64,
        seed: u64,
    ) -> Result<Self> {
        if reward.len() != cost_diff.len() || reward.len() < 2 {
            return Err(Error::param("survey reward must match the strategy count"));
        }
        let net: Vec<f64> = reward.iter().zip(cost_diff).map(|(r, c)| r - c).collect();
        Self::new(normalize_range(net)?, respondents, confidence, cadence_days, seed)
    }

    /// Default two-strategy survey with `r - c̃ = (2, 0)`.
    pub fn standard(respondents: usize, confidence: f64, cadence_days: f64, seed: u64) -> Result<Self> {
        Self::new(vec![2.0, 0.0], respondents, confidence, cadence_days, seed)
    }

    pub fn new(net: Vec<f64>, respondents: usize, confidence: f64, cadence_days: f64, seed: u64) -> Result<Self> {
        if respondents == 0 {
            return Err(Error::param("a survey wave needs at least one respondent"));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::param("confidence must lie in (0, 1)"));
        }
        if !(cadence_days > 0.0) {
            return Err(Error::param("wave cadence must be positive"));
        }
        if (range(&net) - 2.0).abs() > RANGE_SLACK {
            return Err(Error::param("survey net rewards must span a range of exactly 2"));
        }
        Ok(Self { net, respondents, confidence, cadence_days, seed })
    }
}

fn range(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

fn normalize_range(net: Vec<f64>) -> Result<Vec<f64>> {
    let w = range(&net);
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::param("survey net rewards must not all be equal"));
    }
    if (w - 2.0).abs() <= RANGE_SLACK {
        return Ok(net);
    }
    log::warn!("survey net rewards span {w}, rescaling to a range of 2");
    let lo = net.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(net.iter().map(|v| lo + (v - lo) * 2.0 / w).collect())
}

/// `C^μ` from a unit-scale family. Custom perturbations are taken as `Q̄`.
fn scaled(base: &PerturbationModel, mu: f64) -> Result<PerturbationModel> {
    base.with_mu(mu)
}

fn unit(base: &PerturbationModel) -> Result<PerturbationModel> {
    match base.mu() {
        Some(_) => base.with_mu(1.0),
        None => Ok(base.clone()),
    }
}

/// `E[R] = (r - c̃)'C^μ(r - c̃)`.
pub fn expected_response(mu: f64, net: &[f64], base: &PerturbationModel) -> Result<f64> {
    let x = scaled(base, mu)?.choose(net, None)?;
    Ok(dot(net, &x))
}

/// A seeded stream of survey responses.
pub struct Survey {
    net: Vec<f64>,
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl Survey {
    pub fn new(mu_true: f64, cfg: &SurveyConfig, base: &PerturbationModel) -> Result<Self> {
        if !(mu_true > 0.0 && mu_true.is_finite()) {
            return Err(Error::param("true noise level must be positive"));
        }
        let probs = scaled(base, mu_true)?.choose(&cfg.net, None)?;
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::param(e.to_string()))?;
        Ok(Self { net: cfg.net.clone(), dist, rng: ChaCha8Rng::seed_from_u64(cfg.seed) })
    }

    /// `k` responses `R = r_i - c̃_i`, strategy `i` drawn with probability `C_i^μ`.
    pub fn draw(&mut self, k: usize) -> Vec<f64> {
        (0..k).map(|_| self.net[self.dist.sample(&mut self.rng)]).collect()
    }
}

/// One wave of `cfg.respondents` responses.
pub fn simulate_survey(mu_true: f64, cfg: &SurveyConfig, base: &PerturbationModel) -> Result<Vec<f64>> {
    Ok(Survey::new(mu_true, cfg, base)?.draw(cfg.respondents))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseInterval {
    pub mean: f64,
    pub eps: f64,
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    pub confidence: f64,
}

/// Half-width of the distribution-free interval: `1/sqrt(K(1 - confidence))`.
pub fn chebyshev_eps(samples: usize, confidence: f64) -> f64 {
    1.0 / (samples as f64 * (1.0 - confidence)).sqrt()
}

/// Smallest sample count whose interval half-width is at most `eps`.
pub fn required_samples(eps: f64, confidence: f64) -> usize {
    // guard against 7999.999... from rounding
    let k = 1.0 / (eps * eps * (1.0 - confidence));
    (k - 1e-9 * k).ceil() as usize
}

/// `mean ± 1/sqrt(K(1 - confidence))`. Chebyshev's inequality with the
/// variance bound `Var[R] <= (range/2)^2 = 1`.
pub fn chebyshev_interval(samples: &[f64], confidence: f64) -> Result<ResponseInterval> {
    if samples.is_empty() {
        return Err(Error::param("no survey samples"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::param("confidence must lie in (0, 1)"));
    }
    if range(samples) > 2.0 + RANGE_SLACK {
        return Err(Error::Contract("survey responses span more than 2; the variance bound fails".into()));
    }
    let k = samples.len();
    let mean = samples.iter().sum::<f64>() / k as f64;
    let eps = chebyshev_eps(k, confidence);
    Ok(ResponseInterval { mean, eps, lo: mean - eps, hi: mean + eps, samples: k, confidence })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuInterval {
    pub mu_l: f64,
    pub mu_u: f64,
    pub confidence: f64,
    pub samples: usize,
    /// `mu_l` sits at the lower end of the search range.
    pub clipped_low: bool,
    /// `mu_u` sits at the upper end of the search range.
    pub clipped_high: bool,
}

impl MuInterval {
    pub fn contains(&self, mu: f64) -> bool {
        self.mu_l <= mu && mu <= self.mu_u
    }
}

/// Solves `E[R](μ) = target` for the decreasing map, by bisection in `ln μ`.
fn solve_mu(target: f64, net: &[f64], base: &PerturbationModel, lo: f64, hi: f64) -> Result<f64> {
    let (mut a, mut b) = (lo.ln(), hi.ln());
    while b - a > MU_REL_TOL * 0.1 {
        let m = 0.5 * (a + b);
        if expected_response(m.exp(), net, base)? > target {
            a = m;
        } else {
            b = m;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Maps an interval for `E[R]` to one for `μ`; `E[R]` decreases in `μ`, so the
/// lower endpoint gives `μ_U` and the upper one `μ_L`.
pub fn invert_mu(
    er: &ResponseInterval,
    net: &[f64],
    base: &PerturbationModel,
    search: (f64, f64),
) -> Result<MuInterval> {
    let (lo, hi) = search;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::param("search range must satisfy 0 < lo < hi"));
    }
    if range(net) <= 0.0 {
        return Err(Error::param("survey net rewards must not all be equal"));
    }
    let e_max = expected_response(lo, net, base)?;
    let e_min = expected_response(hi, net, base)?;
    if er.hi < e_min || er.lo > e_max {
        return Err(Error::Infeasible(format!(
            "interval [{}, {}] misses the achievable range [{e_min}, {e_max}]",
            er.lo, er.hi
        )));
    }
    let (mu_u, clipped_high) = if er.lo <= e_min { (hi, true) } else { (solve_mu(er.lo, net, base, lo, hi)?, false) };
    let (mu_l, clipped_low) = if er.hi >= e_max { (lo, true) } else { (solve_mu(er.hi, net, base, lo, hi)?, false) };
    Ok(MuInterval { mu_l, mu_u, confidence: er.confidence, samples: er.samples, clipped_low, clipped_high })
}

/// Point estimate: the `μ` whose expected response equals the sample mean,
/// clipped to the search range.
pub fn estimate_mu(mean: f64, net: &[f64], base: &PerturbationModel, search: (f64, f64)) -> Result<f64> {
    let (lo, hi) = search;
    if mean >= expected_response(lo, net, base)? {
        return Ok(lo);
    }
    if mean <= expected_response(hi, net, base)? {
        return Ok(hi);
    }
    solve_mu(mean, net, base, lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBound {
    pub value: f64,
    pub lambda: f64,
}

/// Upper bound on the stationary spend with `r̄ = c̃` and the nonnegative
/// incentive reward, valid for every `μ <= mu_u`:
/// `μ_U λ (β̄ - β_n) + c̃'C¹(λβ)` with `λ < 0` solving `β̄ = β'C¹(λβ)`.
pub fn cost_upper_bound(
    beta_bar: f64,
    mu_u: f64,
    ep: &EpidemicParams,
    base: &PerturbationModel,
    tol: f64,
) -> Result<CostBound> {
    if !(mu_u > 0.0) {
        return Err(Error::param("mu_u must be positive"));
    }
    let c1 = unit(base)?;
    let n = ep.n();
    let b0 = ep.aggregate(&c1.choose(&vec![0.0; n], None)?);
    if !(beta_bar < b0) {
        return Err(Error::domain(format!(
            "beta_bar = {beta_bar} must lie below the unpaid rate {b0}"
        )));
    }
    let cd = ep.cost_diff();
    // with r̄ = c̃ the stationary payoff is λβ, which is what solve_qbar inverts
    let lambda = solve_qbar(beta_bar, &cd, ep, &c1, tol)?;
    if !(lambda < 0.0) {
        return Err(Error::Solver { iterations: 0, residual: lambda, last_iterate: vec![lambda] });
    }
    let x: Vec<f64> = c1.choose(&ep.beta.iter().map(|b| lambda * b).collect::<Vec<_>>(), None)?;
    let value = mu_u * lambda * (beta_bar - ep.beta_max()) + dot(&cd, &x);
    Ok(CostBound { value, lambda })
}

/// Smallest `β̄` whose cost bound stays within `c*`, searched downward from
/// the unpaid rate `β'C¹(0)`.
pub fn min_beta_bar(
    mu_u: f64,
    c_star: f64,
    ep: &EpidemicParams,
    base: &PerturbationModel,
    tol: f64,
) -> Result<f64> {
    let c1 = unit(base)?;
    let x0 = c1.choose(&vec![0.0; ep.n()], None)?;
    let b0 = ep.aggregate(&x0);
    let start_cost = dot(&ep.cost_diff(), &x0);
    if !(start_cost < c_star) {
        return Err(Error::domain(format!(
            "even the unpaid rate costs {start_cost} >= budget {c_star}"
        )));
    }
    let bound = |b: f64| cost_upper_bound(b, mu_u, ep, base, tol * 1e-3).map(|c| c.value);
    let mut lo = ep.beta_min() + 1e-9 * (b0 - ep.beta_min());
    let mut hi = b0;
    if bound(lo)? <= c_star {
        return Ok(lo);
    }
    // invariant: bound(lo) > c*, bound(hi) <= c* (hi = b0 by continuity)
    while hi - lo > tol {
        let m = 0.5 * (lo + hi);
        if bound(m)? <= c_star {
            hi = m;
        } else {
            lo = m;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveRecord {
    pub wave: usize,
    pub t: f64,
    pub interval: ResponseInterval,
    pub mu: MuInterval,
    pub mu_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub waves: Vec<WaveRecord>,
    /// Day of the first wave whose pooled interval is within the accuracy target.
    pub gate_day: Option<f64>,
}

/// Pooled survey waves at `t = cadence, 2 cadence, ...` until the pooled
/// interval half-width reaches `accuracy` or `max_waves` have run.
pub fn survey_campaign(
    mu_true: f64,
    cfg: &SurveyConfig,
    base: &PerturbationModel,
    accuracy: f64,
    max_waves: usize,
) -> Result<Campaign> {
    if !(accuracy > 0.0) {
        return Err(Error::param("accuracy must be positive"));
    }
    let mut survey = Survey::new(mu_true, cfg, base)?;
    let mut pooled = Vec::new();
    let mut waves = Vec::new();
    let mut gate_day = None;
    for w in 1..=max_waves {
        pooled.extend(survey.draw(cfg.respondents));
        let t = w as f64 * cfg.cadence_days;
        let interval = chebyshev_interval(&pooled, cfg.confidence)?;
        let mu = invert_mu(&interval, &cfg.net, base, MU_RANGE)?;
        let mu_hat = estimate_mu(interval.mean, &cfg.net, base, MU_RANGE)?;
        waves.push(WaveRecord { wave: w, t, interval, mu, mu_hat });
        if interval.eps <= accuracy * (1.0 + 1e-12) {
            gate_day = Some(t);
            break;
        }
    }
    Ok(Campaign { waves, gate_day })
}
