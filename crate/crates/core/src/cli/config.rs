//! JSON scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::choice::{BasePerturbation, ChoiceRule, NoiseFamily, NoiseModel, PerturbationModel};
use crate::dynamics::{EpidemicParams, HVariant};
use crate::error::{Error, Result};

pub const SCHEMA: &str = "epgame/1";

fn default_schema() -> String {
    SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChoiceConfig {
    Logit {
        mu: f64,
    },
    Scaled {
        mu: f64,
        base: BaseKind,
    },
    /// Random-utility noise, evaluated by quadrature inside the integrator.
    Noise {
        dist: NoiseFamily,
        scale: f64,
        #[serde(default)]
        shape: f64,
    },
    /// Same as `noise`; `samples` and `seed` drive the Monte-Carlo check
    /// reported alongside the run.
    Mc {
        dist: NoiseFamily,
        scale: f64,
        #[serde(default)]
        shape: f64,
        samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    NegEntropy,
    LogBarrier,
}

impl ChoiceConfig {
    pub fn build(&self, n: usize) -> Result<ChoiceRule> {
        match self {
            ChoiceConfig::Logit { mu } => ChoiceRule::logit(*mu, n),
            ChoiceConfig::Scaled { mu, base } => {
                let base = match base {
                    BaseKind::NegEntropy => BasePerturbation::NegEntropy,
                    BaseKind::LogBarrier => BasePerturbation::LogBarrier,
                };
                Ok(ChoiceRule::Perturbed(PerturbationModel::scaled(*mu, base, n)?))
            }
            ChoiceConfig::Noise { dist, scale, shape } | ChoiceConfig::Mc { dist, scale, shape, .. } => {
                Ok(ChoiceRule::noise(NoiseModel::with_shape(*dist, *scale, *shape)?))
            }
        }
    }

    /// Noise level (`μ` or noise scale).
    pub fn level(&self) -> f64 {
        match self {
            ChoiceConfig::Logit { mu } | ChoiceConfig::Scaled { mu, .. } => *mu,
            ChoiceConfig::Noise { scale, .. } | ChoiceConfig::Mc { scale, .. } => *scale,
        }
    }

    pub fn with_level(&self, v: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            ChoiceConfig::Logit { mu } | ChoiceConfig::Scaled { mu, .. } => *mu = v,
            ChoiceConfig::Noise { scale, .. } | ChoiceConfig::Mc { scale, .. } => *scale = v,
        }
        c
    }
}

/// How the planner picks `(β̄, r̄)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Explicit { beta_bar: f64, r_bar: Vec<f64> },
    /// Budget-optimal `(β*, r*)` for the planner's model of the population.
    Optimal { budget: f64 },
    /// `r̄ = c̃` and the smallest `β̄` whose cost bound fits the budget for
    /// every noise level up to `mu_upper`.
    Robust { budget: f64, mu_upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub target: TargetConfig,
    pub upsilon: f64,
    pub kappa: f64,
    #[serde(default)]
    pub h_variant: HVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Explicit {
        #[serde(rename = "I")]
        i: f64,
        #[serde(rename = "R")]
        r: f64,
        x: Vec<f64>,
        q: f64,
    },
    /// Rest point reached under a previous stationary reward `r`:
    /// `x = C(qβ + r - c̃)` and the endemic `(I, R)` of `β'x`.
    PriorEquilibrium { r: Vec<f64>, q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySettings {
    pub respondents: usize,
    pub cadence: f64,
    pub confidence: f64,
    pub accuracy: f64,
    /// Net survey rewards `r - c̃`; defaults to `(2, 0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<Vec<f64>>,
    #[serde(default = "default_max_waves")]
    pub max_waves: usize,
}

fn default_max_waves() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventConfig {
    /// Swap `(β̄, r̄)` at once.
    Redesign {
        at: f64,
        #[serde(default)]
        at_survey_gate: bool,
        target: TargetConfig,
        #[serde(default)]
        use_estimated_mu: bool,
    },
    /// Switch `β̄` at once, then every `period` days move `r̄` toward the
    /// target as far as keeps the Lyapunov value at most `alpha_max`.
    GatedRedesign {
        at: f64,
        #[serde(default)]
        at_survey_gate: bool,
        target: TargetConfig,
        #[serde(default)]
        use_estimated_mu: bool,
        period: f64,
        alpha_max: f64,
        #[serde(default = "default_iterations")]
        iterations: usize,
    },
}

fn default_iterations() -> usize {
    30
}

impl EventConfig {
    pub fn at(&self) -> f64 {
        match self {
            EventConfig::Redesign { at, .. } | EventConfig::GatedRedesign { at, .. } => *at,
        }
    }

    pub fn at_survey_gate(&self) -> bool {
        match self {
            EventConfig::Redesign { at_survey_gate, .. } | EventConfig::GatedRedesign { at_survey_gate, .. } => {
                *at_survey_gate
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Kappa,
    Upsilon,
    NoiseDist,
    Mu,
}

impl SweepParameter {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "kappa" => Ok(Self::Kappa),
            "upsilon" => Ok(Self::Upsilon),
            "noise_dist" => Ok(Self::NoiseDist),
            "mu" => Ok(Self::Mu),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: String,
    pub values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub name: String,
    pub epidemic: EpidemicParams,
    pub choice: ChoiceConfig,
    pub mechanism: MechanismConfig,
    pub initial: InitialConfig,
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop once the state rests and no planner action is pending.
    #[serde(default)]
    pub early_stop: bool,
    /// Survey of the population's own choice rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey: Option<SurveySettings>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_dt() -> f64 {
    0.05
}

fn default_record_every() -> usize {
    1
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!("unsupported schema {:?}, expected {SCHEMA:?}", self.schema)));
        }
        self.epidemic.validate().map_err(as_config)?;
        self.choice.build(self.epidemic.n()).map_err(as_config)?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be finite and nonnegative".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for e in &self.events {
            let at = e.at();
            if !e.at_survey_gate() {
                if at < prev {
                    return Err(Error::Config("events must be sorted by time".into()));
                }
                prev = at;
            }
            if at < 0.0 || at > self.horizon {
                return Err(Error::Config(format!("event at t = {at} lies outside [0, {}]", self.horizon)));
            }
            let needs_survey = match e {
                EventConfig::Redesign { at_survey_gate, use_estimated_mu, .. }
                | EventConfig::GatedRedesign { at_survey_gate, use_estimated_mu, .. } => {
                    *at_survey_gate || *use_estimated_mu
                }
            };
            if needs_survey && self.survey.is_none() {
                return Err(Error::Config("event refers to the survey but no survey is configured".into()));
            }
            if let EventConfig::GatedRedesign { period, alpha_max, iterations, .. } = e {
                if !(*period > 0.0 && *alpha_max >= 0.0 && *iterations > 0) {
                    return Err(Error::Config("gated redesign needs period > 0, alpha_max >= 0, iterations > 0".into()));
                }
                if matches!(self.choice, ChoiceConfig::Noise { .. } | ChoiceConfig::Mc { .. }) {
                    return Err(Error::Config(
                        "gated redesign needs a storage function, which noise rules lack".into(),
                    ));
                }
            }
        }
        if let Some(sw) = &self.sweep {
            SweepParameter::parse(&sw.parameter)?;
            if sw.values.is_empty() {
                return Err(Error::Config("sweep has no values".into()));
            }
        }
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Parameter(m) | Error::Domain(m) => Error::Config(m),
        other => other,
    }
}
