//! Sweeps over the Y-fake fraction ε for fixed `(p, beta)`, drop detection and
//! figure-data tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::agent_mc_estimate;
use crate::approx::{sequence_lower_bound_with, tree_approx, DEFAULT_DEPTH_CAP, DEFAULT_ITERATIONS};
use crate::error::{CascadeError, Result};
use crate::model::{cascade_thresholds, ModelParams, Value};
use crate::walk::{exact_interval, mc_estimate, DEFAULT_DEPTH, DEFAULT_MAX_STEPS};

/// Minimum distance between a grid point and any cascade threshold.
pub const THRESHOLD_CLEARANCE: f64 = 1e-6;
/// Threshold family used for nudging: `r <= 200`, `k <= 3`.
const NUDGE_R_MAX: u32 = 200;
const NUDGE_K_MAX: u32 = 3;

pub const DEFAULT_STEP: f64 = 0.005;

pub const CSV_HEADER: [&str; 11] = [
    "eps", "beta", "p", "v", "method", "value", "lower", "upper", "std_err", "trials", "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mc,
    Exact,
    Tree,
    Sequence,
    AgentMc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::Exact => "exact",
            Method::Tree => "tree",
            Method::Sequence => "sequence",
            Method::AgentMc => "agent-mc",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = CascadeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Method::Mc),
            "exact" => Ok(Method::Exact),
            "tree" => Ok(Method::Tree),
            "sequence" => Ok(Method::Sequence),
            "agent-mc" => Ok(Method::AgentMc),
            other => Err(CascadeError::InvalidParams(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl EpsGrid {
    /// `start, start + step, ...` up to and including `stop`.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }

    /// The default grid for `beta`: multiples of [`DEFAULT_STEP`] strictly below `1 - beta`.
    pub fn full(beta: f64) -> Self {
        let stop_idx = ((1.0 - beta) / DEFAULT_STEP - 1e-9).ceil() - 1.0;
        Self {
            start: 0.0,
            stop: stop_idx * DEFAULT_STEP,
            step: DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub trials: u64,
    pub seed: u64,
    pub max_steps: u64,
    pub depth: usize,
    pub iters: u32,
    pub depth_cap: usize,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            trials: 100_000,
            seed: 0,
            max_steps: DEFAULT_MAX_STEPS,
            depth: DEFAULT_DEPTH,
            iters: DEFAULT_ITERATIONS,
            depth_cap: DEFAULT_DEPTH_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub p: f64,
    pub beta: f64,
    pub v: Value,
    pub grid: EpsGrid,
    pub method: Method,
    pub params: MethodParams,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        ModelParams::new(self.p, 0.0, self.beta)?;
        let g = &self.grid;
        if !(g.step > 0.0 && g.step.is_finite()) {
            return Err(CascadeError::InvalidParams(format!(
                "grid step must be > 0, got {}",
                g.step
            )));
        }
        if !(g.start >= 0.0 && g.start <= g.stop) {
            return Err(CascadeError::InvalidParams(format!(
                "grid must satisfy 0 <= start <= stop, got start = {}, stop = {}",
                g.start, g.stop
            )));
        }
        if g.stop >= 1.0 - self.beta {
            return Err(CascadeError::InvalidParams(format!(
                "grid stop must be < 1 - beta = {}, got {}",
                1.0 - self.beta,
                g.stop
            )));
        }
        Ok(())
    }

    /// Grid points after moving each one at least [`THRESHOLD_CLEARANCE`] away
    /// from every cascade threshold. `ε = 0` is kept as is: the weights there
    /// are exact and ties at the wall are resolved exactly.
    pub fn grid_points(&self) -> Result<Vec<f64>> {
        let thresholds: Vec<f64> = cascade_thresholds(self.p, self.beta, NUDGE_R_MAX, NUDGE_K_MAX)?
            .into_iter()
            .map(|t| t.eps_value)
            .collect();
        let upper = 1.0 - self.beta;
        Ok(self
            .grid
            .points()
            .into_iter()
            .map(|eps| nudge(eps, &thresholds, upper))
            .collect())
    }
}

fn nudge(mut eps: f64, thresholds: &[f64], upper: f64) -> f64 {
    if eps == 0.0 {
        return eps;
    }
    for _ in 0..8 {
        let Some(&t) = thresholds.iter().find(|&&t| (eps - t).abs() < THRESHOLD_CLEARANCE) else {
            break;
        };
        let up = t + THRESHOLD_CLEARANCE;
        eps = if eps >= t && up < upper {
            up
        } else {
            t - THRESHOLD_CLEARANCE
        };
    }
    eps
}

/// One point of a sweep. Optional fields are empty when the method does not
/// produce them; an empty `value` marks a point whose evaluation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub beta: f64,
    pub p: f64,
    pub v: Value,
    pub method: Method,
    pub value: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub std_err: Option<f64>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub error: Option<String>,
}

impl SweepRow {
    fn empty(spec: &SweepSpec, eps: f64) -> Self {
        Self {
            eps,
            beta: spec.beta,
            p: spec.p,
            v: spec.v,
            method: spec.method,
            value: None,
            lower: None,
            upper: None,
            std_err: None,
            trials: None,
            seed: None,
            error: None,
        }
    }
}

/// Evaluate one grid point with the spec's method.
pub fn evaluate(spec: &SweepSpec, eps: f64) -> SweepRow {
    let mut row = SweepRow::empty(spec, eps);
    if let Err(e) = fill(spec, eps, &mut row) {
        row.error = Some(e.to_string());
    }
    row
}

fn fill(spec: &SweepSpec, eps: f64, row: &mut SweepRow) -> Result<()> {
    let params = ModelParams::new(spec.p, eps, spec.beta)?;
    let mp = &spec.params;
    match spec.method {
        Method::Mc | Method::AgentMc => {
            let est = if spec.method == Method::Mc {
                mc_estimate(&params, spec.v, mp.trials, mp.seed, mp.max_steps)?
            } else {
                agent_mc_estimate(&params, spec.v, mp.trials, mp.seed, mp.max_steps)?
            };
            row.value = Some(est.p_hat);
            row.std_err = Some(est.std_err);
            row.trials = Some(est.trials);
            row.seed = Some(est.seed);
        }
        Method::Exact | Method::Tree => {
            let iv = if spec.method == Method::Exact {
                exact_interval(&params, spec.v, mp.depth.max(1))
            } else {
                tree_approx(&params, spec.v, mp.iters, mp.depth_cap)?
            };
            row.value = Some(iv.midpoint());
            row.lower = Some(iv.y_lower);
            row.upper = Some(iv.y_upper);
        }
        Method::Sequence => {
            let lb = sequence_lower_bound_with(&params, spec.v, mp.iters, mp.depth_cap)?;
            row.value = Some(lb);
            row.lower = Some(lb);
        }
    }
    Ok(())
}

/// One row per grid point in ascending ε. Points are evaluated in parallel;
/// failures become rows with an empty value.
pub fn sweep_eps(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let points = spec.grid_points()?;
    Ok(points.par_iter().map(|&eps| evaluate(spec, eps)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drop {
    /// Midpoint between the two rows.
    pub eps: f64,
    pub jump: f64,
}

/// Decreases between consecutive valued rows larger than `min_jump`.
pub fn detect_drops(rows: &[SweepRow], min_jump: f64) -> Vec<Drop> {
    let valued: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.value.map(|v| (r.eps, v))).collect();
    valued
        .windows(2)
        .filter_map(|w| {
            let jump = w[0].1 - w[1].1;
            (jump > min_jump).then(|| Drop {
                eps: 0.5 * (w[0].0 + w[1].0),
                jump,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = CascadeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(CascadeError::InvalidParams(format!("unknown table format {other:?}"))),
        }
    }
}

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<T>(x: Option<T>, f: impl Fn(T) -> String) -> String {
    x.map(f).unwrap_or_default()
}

fn csv_record(row: &SweepRow) -> [String; 11] {
    [
        fmt_f64(row.eps),
        fmt_f64(row.beta),
        fmt_f64(row.p),
        row.v.label().to_string(),
        row.method.name().to_string(),
        opt(row.value, fmt_f64),
        opt(row.lower, fmt_f64),
        opt(row.upper, fmt_f64),
        opt(row.std_err, fmt_f64),
        opt(row.trials, |t| t.to_string()),
        opt(row.seed, |s| s.to_string()),
    ]
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(csv_record(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    writeln!(out).map_err(serde_json::Error::io)?;
    Ok(())
}

pub fn write_table(rows: &[SweepRow], format: TableFormat, path: &Path) -> Result<()> {
    let io_err = |source| CascadeError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    match format {
        TableFormat::Csv => write_csv(rows, &mut out).map_err(|source| CascadeError::Csv {
            path: path.to_path_buf(),
            source,
        })?,
        TableFormat::Json => write_json(rows, &mut out)?,
    }
    out.flush().map_err(io_err)
}

pub fn read_table(format: TableFormat, path: &Path) -> Result<Vec<SweepRow>> {
    let csv_err = |source| CascadeError::Csv {
        path: path.to_path_buf(),
        source,
    };
    match format {
        TableFormat::Csv => {
            let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
            rdr.deserialize()
                .collect::<csv::Result<Vec<SweepRow>>>()
                .map_err(csv_err)
        }
        TableFormat::Json => {
            let file = File::open(path).map_err(|source| CascadeError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
        }
    }
}
