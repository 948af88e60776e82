//! The `cascade` command line.
//!
//! Every subcommand accepts `--config FILE.json` whose keys are the long flag
//! names; flags given on the command line win. JSON output always carries the
//! effective configuration under `"config"`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

use crate::agent::{agent_mc_estimate, simulate_agents};
use crate::approx::{
    comfort_zone, sequence_lower_bound_with, stage_decomposition, tree_approx, DEFAULT_DEPTH_CAP, DEFAULT_ITERATIONS,
};
use crate::error::{CascadeError, Result};
use crate::model::{bayesian_threshold, cascade_thresholds, ModelParams, Value};
use crate::sweep::{self, EpsGrid, Method, MethodParams, SweepSpec, TableFormat, DEFAULT_STEP};
use crate::walk::{exact_interval, mc_estimate, trial_rng, DEFAULT_DEPTH, DEFAULT_MAX_STEPS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_TRIALS: u64 = 100_000;

#[derive(Debug, Parser)]
#[command(
    name = "cascade",
    version,
    about = "Information cascade probabilities with fake agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the derived quantities a, b, alpha, the weights and forward probabilities.
    Derive(DeriveArgs),
    /// List Bayesian and higher-order cascade thresholds in ε.
    Thresholds(ThresholdArgs),
    /// Monte Carlo estimate of the Y-cascade probability.
    Simulate(SimulateArgs),
    /// Certified interval from the lattice DP.
    Exact(ExactArgs),
    /// Tree-iteration enclosure or sequence lower bound.
    Approx(ApproxArgs),
    /// Evaluate a method over an ε grid and emit a table.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum OutputFormat {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Engine {
    Walk,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum ApproxMethod {
    Tree,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum SweepMethod {
    Mc,
    Exact,
    Tree,
    Sequence,
    AgentMc,
}

impl From<SweepMethod> for Method {
    fn from(m: SweepMethod) -> Self {
        match m {
            SweepMethod::Mc => Method::Mc,
            SweepMethod::Exact => Method::Exact,
            SweepMethod::Tree => Method::Tree,
            SweepMethod::Sequence => Method::Sequence,
            SweepMethod::AgentMc => Method::AgentMc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum SweepFormat {
    Csv,
    Json,
}

/// Flags shared by every subcommand that takes a full parameter triple.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ModelFlags {
    /// Private signal quality, in (0.5, 1).
    #[arg(long)]
    p: Option<f64>,
    /// Fraction of Y-type fake agents.
    #[arg(long)]
    eps: Option<f64>,
    /// Fraction of N-type fake agents.
    #[arg(long)]
    beta: Option<f64>,
}

impl ModelFlags {
    fn fill(&mut self) -> Result<()> {
        if self.p.is_none() {
            return Err(CascadeError::InvalidParams("missing required parameter p (--p)".into()));
        }
        self.eps.get_or_insert(0.0);
        self.beta.get_or_insert(0.0);
        Ok(())
    }

    fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.p.unwrap(), self.eps.unwrap(), self.beta.unwrap())
    }
}

/// `--config`, accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// JSON file with default values, keyed by long flag name.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct DeriveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ThresholdArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Largest number of Ys in a threshold pattern.
    #[arg(long)]
    r_max: Option<u32>,
    /// Largest number of Ns in a threshold pattern.
    #[arg(long)]
    k_max: Option<u32>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    /// True value, G or B.
    #[arg(long)]
    v: Option<Value>,
    #[arg(long, value_enum)]
    engine: Option<Engine>,
    #[arg(long)]
    trials: Option<u64>,
    /// Master seed; trial i uses a stream derived from (seed, i).
    #[arg(long)]
    seed: Option<u64>,
    /// Per-trial cap on observations (walk) or agents (agent engine).
    #[arg(long)]
    max_steps: Option<u64>,
    /// Print one agent-level run instead of an estimate (agent engine only).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    trace: Option<bool>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ExactArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    #[arg(long)]
    v: Option<Value>,
    /// Number of observations propagated.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ApproxArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    #[arg(long)]
    v: Option<Value>,
    #[arg(long, value_enum)]
    method: Option<ApproxMethod>,
    /// Tree iterations, or allowed returns for the sequence bound.
    #[arg(long)]
    iters: Option<u32>,
    /// Per-iteration depth (tree) or sequence length horizon (sequence).
    #[arg(long)]
    depth_cap: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SweepArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    v: Option<Value>,
    #[arg(long, value_enum)]
    method: Option<SweepMethod>,
    #[arg(long)]
    start: Option<f64>,
    /// Last grid point; defaults to the largest step multiple below 1 - beta.
    #[arg(long)]
    stop: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    iters: Option<u32>,
    #[arg(long)]
    depth_cap: Option<usize>,
    /// Report decreases larger than this between neighbouring points.
    #[arg(long)]
    min_jump: Option<f64>,
    /// Write the table here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<SweepFormat>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

/// Run the CLI on `argv` (including the program name) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    run_with(argv, &mut stdout, &mut stderr)
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Derive(a) => derive_cmd(a, out),
        Command::Thresholds(a) => thresholds_cmd(a, out),
        Command::Simulate(a) => simulate_cmd(a, out),
        Command::Exact(a) => exact_cmd(a, out),
        Command::Approx(a) => approx_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out, err),
    }
}

/// Overlay the flags given on the command line onto the config file.
fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let mut base = match config {
        None => Map::new(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CascadeError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            match serde_json::from_str::<Json>(&text) {
                Ok(Json::Object(map)) => map,
                Ok(_) => return Err(config_error(path, "expected a JSON object")),
                Err(e) => return Err(config_error(path, e)),
            }
        }
    };
    if let Json::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Json::Object(base)).map_err(|e| config_error(config.unwrap_or(Path::new("-")), e))
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> CascadeError {
    CascadeError::InvalidParams(format!("config file {}: {e}", path.display()))
}

fn check_range<T: PartialOrd + std::fmt::Display>(name: &str, x: T, lo: T) -> Result<T> {
    if x < lo {
        return Err(CascadeError::InvalidParams(format!("{name} must be >= {lo}, got {x}")));
    }
    Ok(x)
}

fn emit(out: &mut dyn Write, format: OutputFormat, config: &impl Serialize, body: Json) -> Result<()> {
    let mut obj = Map::new();
    obj.insert("config".into(), serde_json::to_value(config)?);
    if let Json::Object(fields) = body {
        obj.extend(fields);
    }
    let io = |e| CascadeError::Json(serde_json::Error::io(e));
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &Json::Object(obj))?;
            writeln!(out).map_err(io)?;
        }
        OutputFormat::Text => {
            for (k, v) in obj.iter().filter(|(k, _)| *k != "config") {
                match v {
                    Json::String(s) => writeln!(out, "{k}: {s}"),
                    other => writeln!(out, "{k}: {other}"),
                }
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

fn derive_cmd(args: DeriveArgs, out: &mut dyn Write) -> Result<()> {
    let mut a = merge(&args, args.common.config.as_deref())?;
    a.model.fill()?;
    let format = *a.format.get_or_insert(OutputFormat::Json);
    let derived = a.model.params()?.derive();
    emit(out, format, &a, serde_json::to_value(derived)?)
}

fn thresholds_cmd(args: ThresholdArgs, out: &mut dyn Write) -> Result<()> {
    let mut a = merge(&args, args.common.config.as_deref())?;
    let p =
        a.p.ok_or_else(|| CascadeError::InvalidParams("missing required parameter p (--p)".into()))?;
    let beta = *a.beta.get_or_insert(0.0);
    let r_max = check_range("r-max", *a.r_max.get_or_insert(10), 1)?;
    let k_max = *a.k_max.get_or_insert(2);
    let format = *a.format.get_or_insert(OutputFormat::Json);
    ModelParams::new(p, 0.0, beta)?;

    let bayesian = (1..=r_max)
        .map(|r| Ok(json!({ "r": r, "eps": bayesian_threshold(p, beta, r)? })))
        .collect::<Result<Vec<_>>>()?;
    let cascade = cascade_thresholds(p, beta, r_max, k_max)?;
    emit(out, format, &a, json!({ "bayesian": bayesian, "cascade": cascade }))
}

fn simulate_cmd(args: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let mut a = merge(&args, args.common.config.as_deref())?;
    a.model.fill()?;
    let v = *a.v.get_or_insert(Value::Bad);
    let engine = *a.engine.get_or_insert(Engine::Walk);
    let trials = check_range("trials", *a.trials.get_or_insert(DEFAULT_TRIALS), 1)?;
    let seed = *a.seed.get_or_insert(0);
    let max_steps = check_range("max-steps", *a.max_steps.get_or_insert(DEFAULT_MAX_STEPS), 1)?;
    let trace = *a.trace.get_or_insert(false);
    let format = *a.format.get_or_insert(OutputFormat::Json);
    let params = a.model.params()?;

    let body = if trace {
        if engine != Engine::Agent {
            return Err(CascadeError::InvalidParams("--trace requires --engine agent".into()));
        }
        let (outcome, draws) = simulate_agents(&params, v, &mut trial_rng(seed, 0), max_steps);
        json!({ "outcome": outcome, "draws": draws })
    } else {
        let est = match engine {
            Engine::Walk => mc_estimate(&params, v, trials, seed, max_steps)?,
            Engine::Agent => agent_mc_estimate(&params, v, trials, seed, max_steps)?,
        };
        serde_json::to_value(est)?
    };
    emit(out, format, &a, body)
}

fn exact_cmd(args: ExactArgs, out: &mut dyn Write) -> Result<()> {
    let mut a = merge(&args, args.common.config.as_deref())?;
    a.model.fill()?;
    let v = *a.v.get_or_insert(Value::Bad);
    let depth = check_range("depth", *a.depth.get_or_insert(DEFAULT_DEPTH), 1)?;
    let format = *a.format.get_or_insert(OutputFormat::Json);
    let iv = exact_interval(&a.model.params()?, v, depth);
    emit(out, format, &a, serde_json::to_value(iv)?)
}

fn approx_cmd(args: ApproxArgs, out: &mut dyn Write) -> Result<()> {
    let mut a = merge(&args, args.common.config.as_deref())?;
    a.model.fill()?;
    let v = *a.v.get_or_insert(Value::Bad);
    let method = *a.method.get_or_insert(ApproxMethod::Tree);
    let iters = *a.iters.get_or_insert(DEFAULT_ITERATIONS);
    let depth_cap = check_range("depth-cap", *a.depth_cap.get_or_insert(DEFAULT_DEPTH_CAP), 1)?;
    let format = *a.format.get_or_insert(OutputFormat::Json);
    let params = a.model.params()?;
    let derived = params.derive();

    let body = match method {
        ApproxMethod::Tree => {
            let iv = tree_approx(&params, v, iters, depth_cap)?;
            let mut body = serde_json::to_value(iv)?;
            body["comfort_zone"] = serde_json::to_value(comfort_zone(&derived))?;
            body
        }
        ApproxMethod::Sequence => {
            let stages = stage_decomposition(&derived)?;
            let lower = sequence_lower_bound_with(&params, v, iters, depth_cap)?;
            json!({ "y_lower": lower, "stages": stages })
        }
    };
    emit(out, format, &a, body)
}

fn sweep_cmd(args: SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut a = merge(&args, args.common.config.as_deref())?;
    let p =
        a.p.ok_or_else(|| CascadeError::InvalidParams("missing required parameter p (--p)".into()))?;
    let beta = *a.beta.get_or_insert(0.0);
    ModelParams::new(p, 0.0, beta)?;
    let defaults = MethodParams::default();
    let full = EpsGrid::full(beta);
    let spec = SweepSpec {
        p,
        beta,
        v: *a.v.get_or_insert(Value::Bad),
        method: (*a.method.get_or_insert(SweepMethod::Exact)).into(),
        grid: EpsGrid {
            start: *a.start.get_or_insert(0.0),
            stop: *a.stop.get_or_insert(full.stop),
            step: *a.step.get_or_insert(DEFAULT_STEP),
        },
        params: MethodParams {
            trials: check_range("trials", *a.trials.get_or_insert(defaults.trials), 1)?,
            seed: *a.seed.get_or_insert(defaults.seed),
            max_steps: check_range("max-steps", *a.max_steps.get_or_insert(defaults.max_steps), 1)?,
            depth: check_range("depth", *a.depth.get_or_insert(defaults.depth), 1)?,
            iters: *a.iters.get_or_insert(defaults.iters),
            depth_cap: check_range("depth-cap", *a.depth_cap.get_or_insert(defaults.depth_cap), 1)?,
        },
    };
    let format = *a.format.get_or_insert(SweepFormat::Csv);
    let table_format = match format {
        SweepFormat::Csv => TableFormat::Csv,
        SweepFormat::Json => TableFormat::Json,
    };

    let rows = sweep::sweep_eps(&spec)?;
    let io = |e| CascadeError::Json(serde_json::Error::io(e));
    let mut failed = 0usize;
    for row in &rows {
        if let Some(msg) = &row.error {
            failed += 1;
            writeln!(err, "warning: eps = {}: {msg}", row.eps).map_err(io)?;
        }
    }
    let drops = a.min_jump.map(|j| sweep::detect_drops(&rows, j));

    match (&a.out, format) {
        (Some(path), _) => {
            sweep::write_table(&rows, table_format, path)?;
            let summary = json!({ "config": a, "out": path, "rows": rows.len(), "failed": failed, "drops": drops });
            serde_json::to_writer_pretty(&mut *out, &summary)?;
            writeln!(out).map_err(io)?;
        }
        (None, SweepFormat::Csv) => {
            sweep::write_csv(&rows, &mut *out).map_err(|source| CascadeError::Csv {
                path: PathBuf::from("<stdout>"),
                source,
            })?;
            if let Some(drops) = &drops {
                for d in drops {
                    writeln!(err, "drop: eps = {:.6}, jump = {:.6}", d.eps, d.jump).map_err(io)?;
                }
            }
        }
        (None, SweepFormat::Json) => {
            let body = json!({ "config": a, "rows": rows, "failed": failed, "drops": drops });
            serde_json::to_writer_pretty(&mut *out, &body)?;
            writeln!(out).map_err(io)?;
        }
    }
    Ok(())
}
