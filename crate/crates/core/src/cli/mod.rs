//! Scenario files, the scenario runner and parameter sweeps behind the
//! `epgame` binary.

pub mod commands;
pub mod config;
pub mod run;
pub mod sweep;

pub use commands::{run_bound, run_design, run_learn, BoundInput, BoundOutput, DesignInput, DesignOutput, LearnInput};
pub use config::{
    ChoiceConfig, EventConfig, InitialConfig, MechanismConfig, ScenarioConfig, SurveySettings, SweepConfig,
    SweepParameter, TargetConfig, SCHEMA,
};
pub use run::{run_scenario, DesignKind, DesignRecord, RunReport, RunSummary, SegmentBound, TOOL_VERSION};
pub use sweep::{summarize, sweep, write_combined_csv, write_sweep, SweepReport};
