//! Inputs and outputs of the `design`, `bound` and `learn` subcommands.

use serde::{Deserialize, Serialize};

use super::config::{ChoiceConfig, SurveySettings, SCHEMA};
use crate::bounds::{b_storage, pi_upsilon};
use crate::choice::ChoiceMap;
use crate::design::{optimize_reward, DesignProblem, DesignSolution, DESIGN_TOL};
use crate::dynamics::{endemic_equilibrium, EpidemicParams};
use crate::error::{Error, Result};
use crate::learning::{survey_campaign, Campaign, SurveyConfig};

fn check_schema(s: &Option<String>) -> Result<()> {
    match s {
        Some(v) if v != SCHEMA => Err(Error::Config(format!("unsupported schema {v:?}, expected {SCHEMA:?}"))),
        _ => Ok(()),
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Parameter(m) | Error::Domain(m) => Error::Config(m),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignInput {
    #[serde(default)]
    pub schema: Option<String>,
    pub epidemic: EpidemicParams,
    pub choice: ChoiceConfig,
    pub budget: f64,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutput {
    #[serde(flatten)]
    pub solution: DesignSolution,
    #[serde(rename = "I_star")]
    pub i_star: f64,
    #[serde(rename = "R_star")]
    pub r_star_recovered: f64,
}

pub fn run_design(input: &DesignInput) -> Result<DesignOutput> {
    check_schema(&input.schema)?;
    let rule = input.choice.build(input.epidemic.n()).map_err(as_config)?;
    let dp = DesignProblem::new(input.epidemic.clone(), rule, input.budget).map_err(as_config)?;
    let solution = optimize_reward(&dp, input.tol.unwrap_or(DESIGN_TOL))?;
    let (i_star, r) = endemic_equilibrium(solution.beta_star, &input.epidemic)?;
    Ok(DesignOutput { solution, i_star, r_star_recovered: r })
}

/// A reward switch from `r_prior` to the design's `r_bar` made while the
/// population rests at the prior equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedesignPair {
    pub choice: ChoiceConfig,
    pub r_prior: Vec<f64>,
    pub r_bar: Vec<f64>,
    #[serde(default)]
    pub q0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInput {
    #[serde(default)]
    pub schema: Option<String>,
    pub epidemic: EpidemicParams,
    pub beta_bar: f64,
    pub upsilon: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub redesign: Option<RedesignPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    pub alpha: f64,
    pub pi: f64,
    pub bound: f64,
    #[serde(rename = "I_bar")]
    pub i_bar: f64,
}

pub fn run_bound(input: &BoundInput) -> Result<BoundOutput> {
    check_schema(&input.schema)?;
    let ep = &input.epidemic;
    ep.validate().map_err(as_config)?;
    let alpha = match (&input.alpha, &input.redesign) {
        (Some(a), None) => *a,
        (None, Some(rd)) => {
            let rule = rd.choice.build(ep.n()).map_err(as_config)?;
            let model = rule
                .perturbation()
                .ok_or_else(|| Error::Config("the redesign storage needs a perturbation-based rule".into()))?;
            if rd.r_prior.len() != ep.n() {
                return Err(Error::Config("r_prior must match the strategy count".into()));
            }
            let cd = ep.cost_diff();
            let p: Vec<f64> = (0..ep.n()).map(|k| rd.q0 * ep.beta[k] + rd.r_prior[k] - cd[k]).collect();
            let x0 = rule.choose(&p, None)?;
            let b0 = ep.aggregate(&x0);
            let bs = b_storage(&rd.r_prior, &rd.r_bar, &x0, rd.q0, model, ep).map_err(as_config)?;
            bs + input.upsilon.powi(2) * (b0 - input.beta_bar).powi(2) / 2.0
        }
        _ => return Err(Error::Config("give exactly one of alpha and redesign".into())),
    };
    if !(input.beta_bar > ep.sigma() && input.beta_bar <= ep.beta_max()) {
        return Err(Error::Config(format!("beta_bar must lie in (sigma, beta_n], got {}", input.beta_bar)));
    }
    let pi = pi_upsilon(alpha, input.beta_bar, input.upsilon, ep, 1e-8).map_err(as_config)?;
    let i_bar = ep.eta() * (1.0 - ep.sigma() / input.beta_bar);
    Ok(BoundOutput { alpha, pi, bound: i_bar * pi, i_bar })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnInput {
    #[serde(default)]
    pub schema: Option<String>,
    /// One-parameter family; its own level is ignored in favor of `mu_true`.
    pub choice: ChoiceConfig,
    pub mu_true: f64,
    pub survey: SurveySettings,
    #[serde(default)]
    pub seed: u64,
}

pub fn run_learn(input: &LearnInput) -> Result<Campaign> {
    check_schema(&input.schema)?;
    let n = match &input.survey.net {
        Some(v) => v.len(),
        None => 2,
    };
    let rule = input.choice.with_level(1.0).build(n).map_err(as_config)?;
    let base = rule
        .perturbation()
        .ok_or_else(|| Error::Config("learning needs a perturbation-based rule".into()))?;
    let s = &input.survey;
    let net = s.net.clone().unwrap_or_else(|| vec![2.0, 0.0]);
    let cfg = SurveyConfig::new(net, s.respondents, s.confidence, s.cadence, input.seed).map_err(as_config)?;
    survey_campaign(input.mu_true, &cfg, base, s.accuracy, s.max_waves)
}
