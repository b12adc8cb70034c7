use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClosedLoopState;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: ClosedLoopState,
    /// `ℬ = β'x`.
    pub aggregate: f64,
    pub reward: Vec<f64>,
    /// `r'x`.
    pub cost: f64,
    pub lyapunov: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    pub points: Vec<TrajectoryPoint>,
    /// Time at which the early-stop rest test fired.
    pub equilibrium_at: Option<f64>,
    pub clamp_events: usize,
}

impl Trajectory {
    pub fn new(n: usize) -> Self {
        Self { n, points: Vec::new(), equilibrium_at: None, clamp_events: 0 }
    }

    pub fn push(&mut self, p: TrajectoryPoint) {
        self.points.push(p);
    }

    /// Appends `other`, dropping its first point when it repeats our last time.
    pub fn extend(&mut self, other: Trajectory) {
        let mut it = other.points.into_iter().peekable();
        if let (Some(last), Some(first)) = (self.points.last(), it.peek()) {
            if last.t == first.t {
                it.next();
            }
        }
        self.points.extend(it);
        self.clamp_events += other.clamp_events;
        if other.equilibrium_at.is_some() {
            self.equilibrium_at = other.equilibrium_at;
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn infected(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.state.i).collect()
    }

    pub fn last(&self) -> Option<&TrajectoryPoint> {
        self.points.last()
    }

    pub fn max_infected(&self) -> f64 {
        self.points.iter().map(|p| p.state.i).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["t", "I", "R", "S"].iter().map(|s| s.to_string()).collect();
        h.extend((1..=self.n).map(|k| format!("x_{k}")));
        h.push("q".into());
        h.push("B".into());
        h.extend((1..=self.n).map(|k| format!("r_{k}")));
        h.push("cost".into());
        h.push("lyapunov".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.csv_header()).map_err(csv_err)?;
        for p in &self.points {
            let s = &p.state;
            let mut row = vec![p.t, s.i, s.r, s.susceptible()];
            row.extend_from_slice(&s.x);
            row.push(s.q);
            row.push(p.aggregate);
            row.extend_from_slice(&p.reward);
            row.push(p.cost);
            row.push(p.lyapunov);
            wr.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Parses the layout written by `write_csv`. Floats round-trip exactly.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let width = rd.headers().map_err(csv_err)?.len();
        if width < 12 || width % 2 != 0 {
            return Err(crate::Error::Io(format!("unexpected trajectory column count {width}")));
        }
        let n = (width - 8) / 2;
        let mut traj = Trajectory::new(n);
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| crate::Error::Io(format!("bad number {f:?}: {e}"))))
                .collect::<Result<_>>()?;
            let x = v[4..4 + n].to_vec();
            traj.push(TrajectoryPoint {
                t: v[0],
                state: ClosedLoopState::new(v[1], v[2], x, v[4 + n]),
                aggregate: v[5 + n],
                reward: v[6 + n..6 + 2 * n].to_vec(),
                cost: v[6 + 2 * n],
                lyapunov: v[7 + 2 * n],
            });
        }
        Ok(traj)
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(e.to_string())
}
