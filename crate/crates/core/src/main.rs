use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use epgame::cli::{
    run_bound, run_design, run_learn, run_scenario, summarize, sweep, write_sweep, BoundInput, DesignInput,
    LearnInput, ScenarioConfig,
};
use epgame::{Error, Result};

#[derive(Parser)]
#[command(name = "epgame", version, about = "Epidemic population game simulator and planner tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trajectory CSV and report JSON.
    Simulate(Common),
    /// Solve the budget-constrained reward design problem.
    Design(Common),
    /// Evaluate the anytime bound on the infectious fraction.
    Bound(Common),
    /// Simulate a survey campaign and the resulting noise-level intervals.
    Learn(Common),
    /// Run the scenario once per value of its sweep parameter.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn emit<T: Serialize>(value: &T, out_dir: Option<&Path>, file: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(file), &text)?;
    }
    println!("{text}");
    Ok(())
}

fn scenario(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(dt) = c.dt {
        cfg.dt = dt;
    }
    if let Some(h) = c.horizon {
        cfg.horizon = h;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ignore_timing(c: &Common, cmd: &str) {
    if c.dt.is_some() || c.horizon.is_some() {
        log::warn!("--dt and --horizon have no effect on `{cmd}`");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = scenario(&c)?;
            let mut rep = run_scenario(&cfg)?;
            let dir = c.out_dir.unwrap_or_else(|| PathBuf::from("."));
            rep.write(&dir)?;
            emit(&rep.summary, None, "")
        }
        Command::Sweep(c) => {
            let cfg = scenario(&c)?;
            let sw = cfg.sweep.clone().ok_or_else(|| Error::Config("config has no sweep section".into()))?;
            let mut runs = sweep(&cfg, &sw.parameter, &sw.values)?;
            let rep = summarize(&sw.parameter, &sw.values, &runs)?;
            let dir = c.out_dir.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            write_sweep(&cfg, &rep, &mut runs, &dir)?;
            emit(&rep, None, "")
        }
        Command::Design(c) => {
            ignore_timing(&c, "design");
            let input: DesignInput = read_json(&c.config)?;
            emit(&run_design(&input)?, c.out_dir.as_deref(), "design.json")
        }
        Command::Bound(c) => {
            ignore_timing(&c, "bound");
            let input: BoundInput = read_json(&c.config)?;
            emit(&run_bound(&input)?, c.out_dir.as_deref(), "bound.json")
        }
        Command::Learn(c) => {
            ignore_timing(&c, "learn");
            let mut input: LearnInput = read_json(&c.config)?;
            if let Some(s) = c.seed {
                input.seed = s;
            }
            emit(&run_learn(&input)?, c.out_dir.as_deref(), "learn.json")
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
