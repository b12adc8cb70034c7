//! Fixed-step RK4 over the closed loop.

use super::trajectory::{Trajectory, TrajectoryPoint};
use super::{field_into, ClosedLoopState, EpidemicParams, MechanismDesign};
use crate::bounds::{epg_storage, StorageInputs};
use crate::choice::ChoiceMap;
use crate::error::{Error, Result};

pub const DEFAULT_DT: f64 = 0.05;
const I_FLOOR: f64 = 1e-30;
const SIMPLEX_DRIFT: f64 = 1e-12;
const REST_THRESHOLD: f64 = 1e-9;
const REST_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrateOptions {
    pub dt: f64,
    pub t_start: f64,
    /// Stop once `|derivative|_inf < 1e-9` for 100 consecutive steps.
    pub early_stop: bool,
    /// Store every k-th step (the final state is always stored).
    pub record_every: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, t_start: 0.0, early_stop: true, record_every: 1 }
    }
}

/// One RK4 step at a time, with the design swappable between steps.
pub struct Stepper<'a, M: ChoiceMap + ?Sized> {
    ep: &'a EpidemicParams,
    md: MechanismDesign,
    rule: &'a M,
    warm: Option<Vec<f64>>,
    clamps: usize,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a, M: ChoiceMap + ?Sized> Stepper<'a, M> {
    pub fn new(ep: &'a EpidemicParams, md: MechanismDesign, rule: &'a M) -> Result<Self> {
        ep.validate()?;
        md.validate(ep)?;
        let len = ep.n() + 3;
        Ok(Self {
            ep,
            md,
            rule,
            warm: None,
            clamps: 0,
            k: [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            tmp: vec![0.0; len],
        })
    }

    pub fn design(&self) -> &MechanismDesign {
        &self.md
    }

    pub fn set_design(&mut self, md: MechanismDesign) -> Result<()> {
        md.validate(self.ep)?;
        self.md = md;
        Ok(())
    }

    pub fn clamp_count(&self) -> usize {
        self.clamps
    }

    /// Advances `y = [I, R, x, q]` from `t` by `dt` in place and returns the sup
    /// norm of the derivative at the start of the step.
    pub fn advance(&mut self, y: &mut [f64], t: f64, dt: f64) -> Result<f64> {
        let len = y.len();
        let (ep, md, rule) = (self.ep, &self.md, self.rule);
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;

        let c = field_into(y, ep, md, rule, self.warm.as_deref(), k1)
            .map_err(|e| nonfinite_or(e, t))?;
        let warm = Some(c.as_slice());
        for j in 0..len {
            tmp[j] = y[j] + 0.5 * dt * k1[j];
        }
        field_into(tmp, ep, md, rule, warm, k2).map_err(|e| nonfinite_or(e, t))?;
        for j in 0..len {
            tmp[j] = y[j] + 0.5 * dt * k2[j];
        }
        field_into(tmp, ep, md, rule, warm, k3).map_err(|e| nonfinite_or(e, t))?;
        for j in 0..len {
            tmp[j] = y[j] + dt * k3[j];
        }
        field_into(tmp, ep, md, rule, warm, k4).map_err(|e| nonfinite_or(e, t))?;
        let rate = k1.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for j in 0..len {
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        self.warm = Some(c);

        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: t + dt });
        }
        self.project(y, t + dt);
        Ok(rate)
    }

    fn project(&mut self, y: &mut [f64], t: f64) {
        let n = self.ep.n();
        let x = &mut y[2..2 + n];
        x.iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        });
        let total: f64 = x.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_DRIFT {
            x.iter_mut().for_each(|v| *v /= total);
        }
        if y[0] < I_FLOOR {
            log::warn!("clamping I = {:e} to {:e} at t = {t}", y[0], I_FLOOR);
            y[0] = I_FLOOR;
            self.clamps += 1;
        }
    }

    /// Derived quantities at a state: aggregate rate, reward, cost and the
    /// Lyapunov value (NaN when the choice rule has no storage function).
    pub fn point(&self, t: f64, y: &[f64]) -> TrajectoryPoint {
        let state = ClosedLoopState::from_slice(y);
        let ep = self.ep;
        let b = ep.aggregate(&state.x);
        let reward = self.md.reward(state.q, ep);
        let cost = reward.iter().zip(&state.x).map(|(r, x)| r * x).sum();
        let lyapunov = lyapunov_value(&state, ep, &self.md, self.rule).unwrap_or(f64::NAN);
        TrajectoryPoint { t, state, aggregate: b, reward, cost, lyapunov }
    }
}

fn nonfinite_or(e: Error, t: f64) -> Error {
    match e {
        Error::Parameter(ref m) if m.contains("finite") => Error::NonFinite { t },
        other => other,
    }
}

/// `V = S(x, p) + S_EPG(ℬI, ℬR, ℬ)`.
pub fn lyapunov_value<M: ChoiceMap + ?Sized>(
    s: &ClosedLoopState,
    ep: &EpidemicParams,
    md: &MechanismDesign,
    rule: &M,
) -> Option<f64> {
    let p = md.payoff(s.q, ep);
    let choice_part = rule.storage(&s.x, &p)?;
    let b = ep.aggregate(&s.x);
    let si = StorageInputs::from_state(s.i, s.r, b, md.beta_bar, md.upsilon);
    let epg = epg_storage(&si, ep).ok()?;
    Some(choice_part + epg)
}

/// RK4 from `s0` at `t = 0` to `t_end` with the default step and options.
pub fn integrate<M: ChoiceMap + ?Sized>(
    s0: &ClosedLoopState,
    ep: &EpidemicParams,
    md: &MechanismDesign,
    rule: &M,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    integrate_with(s0, ep, md, rule, t_end, &IntegrateOptions { dt, ..Default::default() })
}

pub fn integrate_with<M: ChoiceMap + ?Sized>(
    s0: &ClosedLoopState,
    ep: &EpidemicParams,
    md: &MechanismDesign,
    rule: &M,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(Error::param("step size must be positive"));
    }
    let span = t_end - opts.t_start;
    if !(span >= 0.0) {
        return Err(Error::param("horizon must not precede the start time"));
    }
    if opts.record_every == 0 {
        return Err(Error::param("record_every must be at least 1"));
    }
    s0.validate(ep.n())?;
    let mut stepper = Stepper::new(ep, md.clone(), rule)?;

    let steps = step_count(span, opts.dt);
    let mut y = s0.to_vec();
    let mut traj = Trajectory::new(ep.n());
    traj.push(stepper.point(opts.t_start, &y));
    let mut quiet = 0;
    let mut t = opts.t_start;
    for k in 0..steps {
        let t_next = if k + 1 == steps { t_end } else { opts.t_start + (k + 1) as f64 * opts.dt };
        let rate = stepper.advance(&mut y, t, t_next - t)?;
        t = t_next;
        quiet = if rate < REST_THRESHOLD { quiet + 1 } else { 0 };
        let resting = opts.early_stop && quiet >= REST_STEPS;
        if (k + 1) % opts.record_every == 0 || k + 1 == steps || resting {
            traj.push(stepper.point(t, &y));
        }
        if resting {
            traj.equilibrium_at = Some(t);
            break;
        }
    }
    traj.clamp_events = stepper.clamp_count();
    Ok(traj)
}

/// Number of steps of size at most `dt` covering `span`; a trailing sliver
/// shorter than `1e-9 dt` is absorbed into the last step.
pub(crate) fn step_count(span: f64, dt: f64) -> usize {
    (span / dt - 1e-9).ceil().max(0.0) as usize
}
