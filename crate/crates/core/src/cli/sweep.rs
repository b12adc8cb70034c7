//! One run per parameter value, run concurrently, plus an overlay CSV.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{ChoiceConfig, ScenarioConfig, SweepParameter};
use super::run::{run_scenario, RunReport, RunSummary};
use crate::choice::NoiseFamily;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub labels: Vec<String>,
    pub summaries: Vec<RunSummary>,
    pub peak_ratios: Vec<f64>,
    /// `sup_t |I_a/I_a* - I_b/I_b*|` over the shared time grid, when the runs
    /// share one.
    pub pairwise_sup_distance: Option<Vec<Vec<f64>>>,
    /// Largest swing `max - min` of `I/I*` over all runs, for scale.
    pub signal: f64,
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn number(p: SweepParameter, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Config(format!("sweep over {p:?} needs numeric values, got {v}")))
}

/// `cfg` with one sweep value substituted.
pub fn apply_value(cfg: &ScenarioConfig, p: SweepParameter, v: &Value) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    c.sweep = None;
    match p {
        SweepParameter::Kappa => c.mechanism.kappa = number(p, v)?,
        SweepParameter::Upsilon => c.mechanism.upsilon = number(p, v)?,
        SweepParameter::Mu => c.choice = c.choice.with_level(number(p, v)?),
        SweepParameter::NoiseDist => {
            let name = v.as_str().ok_or_else(|| Error::Config(format!("noise_dist values must be names, got {v}")))?;
            let dist = NoiseFamily::parse(name)?;
            let scale = cfg.choice.level();
            c.choice = match &cfg.choice {
                ChoiceConfig::Mc { shape, samples, seed, .. } => {
                    ChoiceConfig::Mc { dist, scale, shape: *shape, samples: *samples, seed: *seed }
                }
                ChoiceConfig::Noise { shape, .. } => ChoiceConfig::Noise { dist, scale, shape: *shape },
                _ => ChoiceConfig::Noise { dist, scale, shape: 0.0 },
            };
        }
    }
    c.name = format!("{}_{}", cfg.name, label(v).replace(['/', '\\', ' '], "_"));
    c.validate()?;
    Ok(c)
}

pub fn sweep(cfg: &ScenarioConfig, parameter: &str, values: &[Value]) -> Result<Vec<RunReport>> {
    let p = SweepParameter::parse(parameter)?;
    if values.is_empty() {
        return Err(Error::Config("sweep has no values".into()));
    }
    let cfgs = values.iter().map(|v| apply_value(cfg, p, v)).collect::<Result<Vec<_>>>()?;
    cfgs.par_iter().map(run_scenario).collect()
}

pub fn summarize(parameter: &str, values: &[Value], runs: &[RunReport]) -> Result<SweepReport> {
    let p = SweepParameter::parse(parameter)?;
    let ratios: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.trajectory.points.iter().map(|pt| pt.state.i / r.summary.i_star).collect())
        .collect();
    let shared_grid = runs.windows(2).all(|w| w[0].trajectory.times() == w[1].trajectory.times());
    let pairwise_sup_distance = shared_grid.then(|| {
        ratios
            .iter()
            .map(|a| {
                ratios
                    .iter()
                    .map(|b| a.iter().zip(b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs())))
                    .collect()
            })
            .collect()
    });
    let hi = ratios.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    Ok(SweepReport {
        parameter: p,
        labels: values.iter().map(label).collect(),
        summaries: runs.iter().map(|r| r.summary.clone()).collect(),
        peak_ratios: runs.iter().map(|r| r.summary.peak_ratio).collect(),
        pairwise_sup_distance,
        signal: hi - lo,
    })
}

/// Stacks the runs' trajectories with a leading `value` column.
pub fn write_combined_csv<W: Write>(labels: &[String], runs: &[RunReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let Some(first) = runs.first() else {
        return Ok(());
    };
    let mut header = vec!["value".to_string()];
    header.extend(first.trajectory.csv_header());
    wr.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for (lab, run) in labels.iter().zip(runs) {
        let mut buf = Vec::new();
        run.trajectory.write_csv(&mut buf)?;
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        for rec in rd.records() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let mut row = vec![lab.as_str()];
            row.extend(rec.iter());
            wr.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Per-run files, `<name>_sweep.csv` and `<name>_sweep.json` in `dir`.
pub fn write_sweep(cfg: &ScenarioConfig, report: &SweepReport, runs: &mut [RunReport], dir: &Path) -> Result<()> {
    for r in runs.iter_mut() {
        r.write(dir)?;
    }
    let f = std::fs::File::create(dir.join(format!("{}_sweep.csv", cfg.name)))?;
    write_combined_csv(&report.labels, runs, std::io::BufWriter::new(f))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join(format!("{}_sweep.json", cfg.name)), json)?;
    Ok(())
}
