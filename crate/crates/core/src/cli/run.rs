//! Executes a scenario: initial design, survey campaign, scheduled redesigns.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ChoiceConfig, EventConfig, InitialConfig, ScenarioConfig, SurveySettings, TargetConfig};
use crate::bounds::{anytime_bound_check, epg_storage, BoundReport, StorageInputs};
use crate::choice::{mc_choice, ChoiceMap, ChoiceRule, NoiseModel, PerturbationModel};
use crate::design::{optimize_reward, DesignProblem, DESIGN_TOL};
use crate::dynamics::integrate::step_count;
use crate::dynamics::{endemic_equilibrium, ClosedLoopState, EpidemicParams, MechanismDesign, Stepper, Trajectory};
use crate::error::{Error, Result};
use crate::learning::{min_beta_bar, survey_campaign, Campaign, SurveyConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const SETTLE_BAND: f64 = 0.01;
const REST_THRESHOLD: f64 = 1e-9;
const REST_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Initial,
    Redesign,
    Gated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub t: f64,
    pub kind: DesignKind,
    pub beta_bar: f64,
    pub r_bar: Vec<f64>,
    /// Noise level assumed by the planner, when it came from the survey.
    pub mu_used: Option<f64>,
    /// Lyapunov value accepted by a gated step.
    pub alpha: Option<f64>,
    /// Fraction of the way to the target taken by a gated step.
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBound {
    pub start: f64,
    pub end: f64,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCheck {
    pub payoff: Vec<f64>,
    pub quadrature: Vec<f64>,
    pub monte_carlo: Vec<f64>,
    pub sup_diff: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub terminal: crate::dynamics::TrajectoryPoint,
    /// Target rate in force at the end of the run.
    pub beta_bar: f64,
    /// Endemic `I*` of that target rate.
    pub i_star: f64,
    pub peak_ratio: f64,
    pub first_event_at: Option<f64>,
    pub peak_ratio_after_event: Option<f64>,
    pub peak_cost_after_event: Option<f64>,
    pub mean_cost_after_event: Option<f64>,
    /// Earliest recorded time after which `|I/I* - 1| <= 0.01` holds for good.
    pub settling_time: Option<f64>,
    pub terminal_cost: f64,
    pub equilibrium_at: Option<f64>,
    pub clamp_events: usize,
}

impl RunSummary {
    pub fn from_trajectory(
        traj: &Trajectory,
        beta_bar: f64,
        first_event_at: Option<f64>,
        ep: &EpidemicParams,
    ) -> Result<Self> {
        let terminal = traj.last().ok_or_else(|| Error::Contract("empty trajectory".into()))?.clone();
        let (i_star, _) = endemic_equilibrium(beta_bar, ep)?;
        let ratio = |i: f64| i / i_star;
        let peak_ratio = traj.points.iter().map(|p| ratio(p.state.i)).fold(f64::NEG_INFINITY, f64::max);
        let after: Vec<_> = match first_event_at {
            Some(t0) => traj.points.iter().filter(|p| p.t > t0).collect(),
            None => Vec::new(),
        };
        let nonempty = first_event_at.is_some() && !after.is_empty();
        let peak_ratio_after_event =
            nonempty.then(|| after.iter().map(|p| ratio(p.state.i)).fold(f64::NEG_INFINITY, f64::max));
        let peak_cost_after_event = nonempty.then(|| after.iter().map(|p| p.cost).fold(f64::NEG_INFINITY, f64::max));
        let mean_cost_after_event =
            nonempty.then(|| after.iter().map(|p| p.cost).sum::<f64>() / after.len() as f64);
        let mut settling_time = None;
        for p in traj.points.iter().rev() {
            if (ratio(p.state.i) - 1.0).abs() <= SETTLE_BAND {
                settling_time = Some(p.t);
            } else {
                break;
            }
        }
        Ok(Self {
            terminal_cost: terminal.cost,
            terminal,
            beta_bar,
            i_star,
            peak_ratio,
            first_event_at,
            peak_ratio_after_event,
            peak_cost_after_event,
            mean_cost_after_event,
            settling_time,
            equilibrium_at: traj.equilibrium_at,
            clamp_events: traj.clamp_events,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub tool_version: String,
    pub name: String,
    pub trajectory_file: Option<PathBuf>,
    pub summary: RunSummary,
    pub designs: Vec<DesignRecord>,
    pub bound_checks: Vec<SegmentBound>,
    pub campaign: Option<Campaign>,
    pub mc_check: Option<McCheck>,
    pub config: ScenarioConfig,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

impl RunReport {
    /// Writes `<name>.csv` and `<name>.json` into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.name));
        self.trajectory.save_csv(&csv)?;
        self.trajectory_file = Some(csv);
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join(format!("{}.json", self.name)), json)?;
        Ok(())
    }
}

/// Unit-scale member of the configured perturbation family.
fn unit_base(rule: &ChoiceRule) -> Result<PerturbationModel> {
    let m = rule
        .perturbation()
        .ok_or_else(|| Error::Config("surveys and robust targets need a perturbation-based choice rule".into()))?;
    match m.mu() {
        Some(_) => m.with_mu(1.0),
        None => Ok(m.clone()),
    }
}

fn survey_config(s: &SurveySettings, n: usize, seed: u64) -> Result<SurveyConfig> {
    let net = match &s.net {
        Some(v) => v.clone(),
        None if n == 2 => vec![2.0, 0.0],
        None => return Err(Error::Config("survey net rewards are required with more than two strategies".into())),
    };
    if net.len() != n {
        return Err(Error::Config("survey net rewards must match the strategy count".into()));
    }
    SurveyConfig::new(net, s.respondents, s.confidence, s.cadence, seed).map_err(to_config)
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Parameter(m) => Error::Config(m),
        other => other,
    }
}

fn resolve_target(target: &TargetConfig, ep: &EpidemicParams, planner: &ChoiceRule) -> Result<(f64, Vec<f64>)> {
    match target {
        TargetConfig::Explicit { beta_bar, r_bar } => Ok((*beta_bar, r_bar.clone())),
        TargetConfig::Optimal { budget } => {
            let dp = DesignProblem::new(ep.clone(), planner.clone(), *budget).map_err(to_config)?;
            let sol = optimize_reward(&dp, DESIGN_TOL)?;
            Ok((sol.beta_star, sol.r_star))
        }
        TargetConfig::Robust { budget, mu_upper } => {
            let base = unit_base(planner)?;
            let bb = min_beta_bar(*mu_upper, *budget, ep, &base, 1e-10)?;
            Ok((bb, ep.cost_diff()))
        }
    }
}

fn initial_state(init: &InitialConfig, ep: &EpidemicParams, rule: &ChoiceRule) -> Result<ClosedLoopState> {
    let s = match init {
        InitialConfig::Explicit { i, r, x, q } => ClosedLoopState::new(*i, *r, x.clone(), *q),
        InitialConfig::PriorEquilibrium { r, q } => {
            if r.len() != ep.n() {
                return Err(Error::Config("prior reward must match the strategy count".into()));
            }
            let cd = ep.cost_diff();
            let p: Vec<f64> = (0..ep.n()).map(|k| q * ep.beta[k] + r[k] - cd[k]).collect();
            let x = rule.choose(&p, None)?;
            let (i, rr) = endemic_equilibrium(ep.aggregate(&x), ep)?;
            ClosedLoopState::new(i, rr, x, *q)
        }
    };
    s.validate(ep.n()).map_err(to_config)?;
    Ok(s)
}

struct Scheduled<'c> {
    at: f64,
    event: &'c EventConfig,
}

/// Gated `r̄` updates still to come.
struct Gate {
    next: f64,
    period: f64,
    alpha_max: f64,
    iterations: usize,
    target: Vec<f64>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let ep = &cfg.epidemic;
    let n = ep.n();
    let rule = cfg.choice.build(n)?;

    let campaign = match &cfg.survey {
        Some(s) => {
            let sc = survey_config(s, n, cfg.seed)?;
            Some(survey_campaign(cfg.choice.level(), &sc, &unit_base(&rule)?, s.accuracy, s.max_waves)?)
        }
        None => None,
    };

    let mut schedule = Vec::with_capacity(cfg.events.len());
    for e in &cfg.events {
        let at = if e.at_survey_gate() {
            campaign
                .as_ref()
                .and_then(|c| c.gate_day)
                .ok_or_else(|| Error::Infeasible("the survey never reached its accuracy target".into()))?
        } else {
            e.at()
        };
        if at > cfg.horizon {
            return Err(Error::Config(format!("event at t = {at} lies beyond the horizon {}", cfg.horizon)));
        }
        schedule.push(Scheduled { at, event: e });
    }
    schedule.sort_by(|a, b| a.at.total_cmp(&b.at));
    let first_event_at = schedule.first().map(|s| s.at);

    let (bb0, rb0) = resolve_target(&cfg.mechanism.target, ep, &rule)?;
    let m = &cfg.mechanism;
    let md0 = MechanismDesign::new(bb0, rb0, m.upsilon, m.kappa, m.h_variant);
    md0.validate(ep).map_err(to_config)?;
    let mut designs = vec![DesignRecord {
        t: 0.0,
        kind: DesignKind::Initial,
        beta_bar: md0.beta_bar,
        r_bar: md0.r_bar.clone(),
        mu_used: None,
        alpha: None,
        step: None,
    }];

    let s0 = initial_state(&cfg.initial, ep, &rule)?;
    let mc_check = match &cfg.choice {
        ChoiceConfig::Mc { dist, scale, shape, samples, seed } => {
            let noise = NoiseModel::with_shape(*dist, *scale, *shape)?;
            let payoff = md0.payoff(s0.q, ep);
            let quadrature = rule.choose(&payoff, None)?;
            let monte_carlo = mc_choice(&noise, &payoff, *samples, *seed)?;
            let sup_diff = quadrature.iter().zip(&monte_carlo).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
            Some(McCheck { payoff, quadrature, monte_carlo, sup_diff, samples: *samples })
        }
        _ => None,
    };

    let mut stepper = Stepper::new(ep, md0, &rule)?;
    let mut y = s0.to_vec();
    let mut traj = Trajectory::new(n);
    traj.push(stepper.point(0.0, &y));
    let mut segments: Vec<(usize, usize)> = vec![(0, 0)];
    let mut t = 0.0;
    let mut steps_taken = 0usize;
    let mut quiet = 0usize;
    let mut next_event = 0usize;
    let mut gate: Option<Gate> = None;

    loop {
        let pending_event = schedule.get(next_event).map(|s| s.at);
        let pending_gate = gate.as_ref().map(|g| g.next).filter(|g| *g <= cfg.horizon);
        let target = [pending_event, pending_gate, Some(cfg.horizon)]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, f64::min);

        let span = target - t;
        let steps = step_count(span, cfg.dt);
        let seg_start = t;
        let mut rested = false;
        for k in 0..steps {
            let t_next = if k + 1 == steps { target } else { seg_start + (k + 1) as f64 * cfg.dt };
            let rate = stepper.advance(&mut y, t, t_next - t)?;
            t = t_next;
            steps_taken += 1;
            quiet = if rate < REST_THRESHOLD { quiet + 1 } else { 0 };
            let idle = cfg.early_stop && quiet >= REST_STEPS && pending_event.is_none() && pending_gate.is_none();
            let at_action = k + 1 == steps && target < cfg.horizon;
            if (steps_taken % cfg.record_every == 0 || k + 1 == steps || idle) && !at_action {
                traj.push(stepper.point(t, &y));
            }
            if idle {
                traj.equilibrium_at = Some(t);
                rested = true;
                break;
            }
        }
        if rested {
            break;
        }
        t = target;

        let mut changed = false;
        while let Some(s) = schedule.get(next_event).filter(|s| s.at <= t) {
            apply_event(s.event, t, ep, &rule, campaign.as_ref(), &mut stepper, &mut designs, &mut gate)?;
            next_event += 1;
            changed = true;
        }
        if let Some(g) = gate.as_mut().filter(|g| g.next <= t) {
            let done = gated_step(g, t, &y, ep, &rule, &mut stepper, &mut designs)?;
            g.next += g.period;
            if done {
                gate = None;
            }
            changed = true;
        }
        if changed {
            quiet = 0;
            if traj.last().map(|p| p.t) == Some(t) {
                traj.points.pop();
            }
            let seg = (traj.len(), designs.len() - 1);
            match segments.last_mut() {
                Some(last) if last.0 == seg.0 => *last = seg,
                _ => segments.push(seg),
            }
            traj.push(stepper.point(t, &y));
        } else if traj.last().map(|p| p.t) != Some(t) {
            traj.push(stepper.point(t, &y));
        }
        if t >= cfg.horizon {
            break;
        }
    }
    traj.clamp_events = stepper.clamp_count();

    let bound_checks = segment_bounds(&traj, &segments, &designs, m, ep)?;
    let summary = RunSummary::from_trajectory(&traj, stepper.design().beta_bar, first_event_at, ep)?;
    Ok(RunReport {
        schema: super::config::SCHEMA.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        name: cfg.name.clone(),
        trajectory_file: None,
        summary,
        designs,
        bound_checks,
        campaign,
        mc_check,
        config: cfg.clone(),
        trajectory: traj,
    })
}

/// The noise level the planner assumes at time `t`: the latest survey
/// estimate when asked for, otherwise the true rule.
fn planner_rule(
    use_estimated_mu: bool,
    t: f64,
    rule: &ChoiceRule,
    campaign: Option<&Campaign>,
) -> Result<(ChoiceRule, Option<f64>)> {
    if !use_estimated_mu {
        return Ok((rule.clone(), None));
    }
    let wave = campaign
        .and_then(|c| c.waves.iter().rev().find(|w| w.t <= t + 1e-9))
        .ok_or_else(|| Error::Config(format!("no survey wave completed by t = {t}")))?;
    let m = rule
        .perturbation()
        .ok_or_else(|| Error::Config("estimated noise levels need a perturbation-based rule".into()))?;
    Ok((ChoiceRule::Perturbed(m.with_mu(wave.mu_hat)?), Some(wave.mu_hat)))
}

#[allow(clippy::too_many_arguments)]
fn apply_event(
    e: &EventConfig,
    t: f64,
    ep: &EpidemicParams,
    rule: &ChoiceRule,
    campaign: Option<&Campaign>,
    stepper: &mut Stepper<'_, ChoiceRule>,
    designs: &mut Vec<DesignRecord>,
    gate: &mut Option<Gate>,
) -> Result<()> {
    match e {
        EventConfig::Redesign { target, use_estimated_mu, .. } => {
            let (planner, mu_used) = planner_rule(*use_estimated_mu, t, rule, campaign)?;
            let (bb, rb) = resolve_target(target, ep, &planner)?;
            let md = MechanismDesign { beta_bar: bb, r_bar: rb, ..stepper.design().clone() };
            stepper.set_design(md).map_err(to_config)?;
            designs.push(record(t, DesignKind::Redesign, stepper.design(), mu_used, None, None));
        }
        EventConfig::GatedRedesign { target, use_estimated_mu, period, alpha_max, iterations, .. } => {
            let (planner, mu_used) = planner_rule(*use_estimated_mu, t, rule, campaign)?;
            let (bb, rb) = resolve_target(target, ep, &planner)?;
            let md = MechanismDesign { beta_bar: bb, ..stepper.design().clone() };
            stepper.set_design(md).map_err(to_config)?;
            designs.push(record(t, DesignKind::Redesign, stepper.design(), mu_used, None, None));
            *gate = Some(Gate {
                next: t + period,
                period: *period,
                alpha_max: *alpha_max,
                iterations: *iterations,
                target: rb,
            });
        }
    }
    Ok(())
}

fn record(
    t: f64,
    kind: DesignKind,
    md: &MechanismDesign,
    mu_used: Option<f64>,
    alpha: Option<f64>,
    step: Option<f64>,
) -> DesignRecord {
    DesignRecord { t, kind, beta_bar: md.beta_bar, r_bar: md.r_bar.clone(), mu_used, alpha, step }
}

/// Moves `r̄` along the segment to the target as far as keeps
/// `S(x, p) + S_EPG <= alpha_max`, by bisection on the fraction. Returns true
/// once the target is reached.
fn gated_step(
    g: &Gate,
    t: f64,
    y: &[f64],
    ep: &EpidemicParams,
    rule: &ChoiceRule,
    stepper: &mut Stepper<'_, ChoiceRule>,
    designs: &mut Vec<DesignRecord>,
) -> Result<bool> {
    let s = ClosedLoopState::from_slice(y);
    let cur = stepper.design().clone();
    let si = StorageInputs::from_state(s.i, s.r, ep.aggregate(&s.x), cur.beta_bar, cur.upsilon);
    let epg = epg_storage(&si, ep)?;
    let candidate = |a: f64| -> Vec<f64> {
        cur.r_bar.iter().zip(&g.target).map(|(r, rt)| r + a * (rt - r)).collect()
    };
    let alpha = |a: f64| -> Result<f64> {
        let md = MechanismDesign { r_bar: candidate(a), ..cur.clone() };
        let sx = rule
            .storage(&s.x, &md.payoff(s.q, ep))
            .ok_or_else(|| Error::Config("gated redesign needs a storage function".into()))?;
        Ok(sx + epg)
    };
    let (step, value) = if alpha(1.0)? <= g.alpha_max {
        (1.0, alpha(1.0)?)
    } else if alpha(0.0)? <= g.alpha_max {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..g.iterations {
            let mid = 0.5 * (lo + hi);
            if alpha(mid)? <= g.alpha_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, alpha(lo)?)
    } else {
        (0.0, alpha(0.0)?)
    };
    let r_bar = if step == 1.0 { g.target.clone() } else { candidate(step) };
    stepper.set_design(MechanismDesign { r_bar, ..cur })?;
    designs.push(record(t, DesignKind::Gated, stepper.design(), None, Some(value), Some(step)));
    Ok(step == 1.0)
}

/// Anytime bound for each stretch over which the design stayed fixed, with
/// `α` the Lyapunov value at the start of the stretch.
fn segment_bounds(
    traj: &Trajectory,
    segments: &[(usize, usize)],
    designs: &[DesignRecord],
    m: &super::config::MechanismConfig,
    ep: &EpidemicParams,
) -> Result<Vec<SegmentBound>> {
    let mut out = Vec::new();
    for (k, &(a, di)) in segments.iter().enumerate() {
        let b = segments.get(k + 1).map_or(traj.len(), |s| s.0);
        // the last point of a stretch is the first of the next, under the new design
        let end = if k + 1 < segments.len() { b + 1 } else { b };
        let d = &designs[di];
        let alpha = traj.points[a].lyapunov;
        if !alpha.is_finite() || a >= end {
            continue;
        }
        let md = MechanismDesign::new(d.beta_bar, d.r_bar.clone(), m.upsilon, m.kappa, m.h_variant);
        let sub = Trajectory { n: traj.n, points: traj.points[a..end.min(traj.len())].to_vec(), ..Default::default() };
        let report = anytime_bound_check(&sub, alpha.max(0.0), &md, ep)?;
        out.push(SegmentBound { start: sub.points[0].t, end: sub.points.last().unwrap().t, report });
    }
    Ok(out)
}
