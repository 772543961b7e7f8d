//! Command-line front end.
//!
//! Every subcommand writes its result to `--output` (or stdout). When an
//! output file is given, a run manifest is written next to it as
//! `<output>.manifest.json`; `--manifest <path>` writes one explicitly.
//! Files are written to a temporary sibling and renamed into place.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filtering::{forward_filter, forward_filter_streaming};
use crate::inference::{sgd_infer, BufferChoice, EtaSchedule, ParamSelector, SgdConfig};
use crate::lyapunov::{
    birkhoff_phi, birkhoff_tau, estimate_backward_gap, estimate_gap, qr_gap, tau_bound_log,
    separation_distances, trajectory_distances, trajectory_gap, GapEstimate, TRAJECTORY_CUTOFF,
};
use crate::model::{HmmModel, ObservationSequence, StateDistribution};
use crate::sampling::{
    derive_seed, load_observations, sample_sequence, write_observations, write_states, ObsFormat,
};

#[derive(Debug, Parser)]
#[command(name = "hmmlyap", version, about = "HMM forgetting rates, buffer lengths and buffered gradient inference")]
struct Cli {
    /// Worker threads for parallel sections; 1 keeps runs bit-reproducible
    /// regardless of scheduling.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Write the run manifest to this path.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Simulate a state and observation sequence.
    Sample(SampleArgs),
    /// Run the normalized forward filter.
    Filter(FilterArgs),
    /// Estimate the forgetting rate and the buffer length.
    Gap(GapArgs),
    /// Separation of two filters started from different distributions.
    SyncDemo(SyncArgs),
    /// Birkhoff contraction coefficient of the transition matrix.
    Tau(TauArgs),
    /// Buffered mini-batch gradient ascent on selected parameters.
    Infer(InferArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FormatArg {
    Text,
    Binary,
}

impl From<FormatArg> for ObsFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ObsFormat::Text,
            FormatArg::Binary => ObsFormat::Binary,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SampleArgs {
    /// Model JSON file, or `example` for the built-in three-state model.
    #[arg(long)]
    model: String,
    #[arg(short = 'n', long = "n")]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Also write the latent states, one integer per line.
    #[arg(long)]
    states: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct FilterArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    obs: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    obs_format: FormatArg,
    /// Keep O(K) state and print only the summary JSON.
    #[arg(long)]
    stream: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Jacobian,
    Qr,
    Trajectory,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DirectionArg {
    Forward,
    Backward,
}

#[derive(Debug, Args, Serialize)]
struct GapArgs {
    #[arg(long)]
    model: String,
    #[arg(long, conflicts_with = "simulate", required_unless_present = "simulate")]
    obs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    obs_format: FormatArg,
    /// Simulate `N` observations from the model with sampling seed `SEED`.
    #[arg(long, num_args = 2, value_names = ["N", "SEED"])]
    simulate: Option<Vec<u64>>,
    #[arg(long, default_value_t = crate::lyapunov::DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = 1e-15)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Jacobian)]
    method: MethodArg,
    /// Direction of the filter for the Jacobian method.
    #[arg(long, value_enum, default_value_t = DirectionArg::Forward)]
    direction: DirectionArg,
    /// Seed for the random initial tangent vector.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SyncArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Sequences reported individually.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Sequences averaged into the mean curve.
    #[arg(long, default_value_t = 500)]
    mean_seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// First starting distribution, comma-separated (default uniform).
    #[arg(long)]
    start_a: Option<String>,
    /// Second starting distribution (default: all mass on state 1).
    #[arg(long)]
    start_b: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TauArgs {
    #[arg(long)]
    model: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScheduleArg {
    PerRestart,
    Global,
}

#[derive(Debug, Args, Serialize)]
struct InferArgs {
    /// Starting model; parameters not listed in `--free` stay fixed.
    #[arg(long)]
    model: String,
    #[arg(long)]
    obs: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    obs_format: FormatArg,
    /// Free parameters, e.g. `mu1,mu2` or `mu1,sigma1,row2`.
    #[arg(long)]
    free: String,
    /// Starting values of the free parameters in natural units.
    #[arg(long)]
    start: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    eta0: f64,
    #[arg(long, default_value_t = 0.95)]
    decay: f64,
    #[arg(long, default_value_t = 25)]
    steps_per_restart: usize,
    #[arg(long, default_value_t = 0.02)]
    restart_threshold: f64,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// `auto` or a fixed length used for both buffers.
    #[arg(long, default_value = "auto")]
    buffer: String,
    #[arg(long, default_value_t = 1e-10)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::PerRestart)]
    eta_schedule: ScheduleArg,
    #[arg(long, default_value_t = 100)]
    max_restarts: usize,
    /// Reject sampled indices whose buffer windows overlap.
    #[arg(long)]
    non_overlapping: bool,
    /// CSV trace of every step.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub version: String,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

struct Context {
    inputs: BTreeMap<String, String>,
}

impl Context {
    fn digest(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn model(&mut self, source: &str) -> Result<HmmModel> {
        if source == "example" {
            return Ok(HmmModel::example_three_state());
        }
        let path = Path::new(source);
        self.digest(path)?;
        HmmModel::load(path)
    }

    fn obs(&mut self, path: &Path, format: FormatArg) -> Result<ObservationSequence> {
        self.digest(path)?;
        load_observations(path, format.into())
    }
}

/// Writes `bytes` to a temporary file beside `path` and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("cannot parse {v:?} as a number")))
        })
        .collect()
}

fn finish(
    cli: &Cli,
    ctx: Context,
    name: &str,
    config: Value,
    seed: Option<u64>,
    outputs: &[&Path],
) -> Result<()> {
    let manifest = RunManifest {
        subcommand: name.to_string(),
        config,
        seed,
        inputs: ctx.inputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    for o in outputs {
        write_atomic(&manifest_path(o), text.as_bytes())?;
    }
    if let Some(p) = &cli.manifest {
        write_atomic(p, text.as_bytes())?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let mut ctx = Context {
        inputs: BTreeMap::new(),
    };
    let config = serde_json::to_value(&cli.command)?;
    // the enum serializes as {"<name>": {...}}; keep the inner object
    let config = config
        .as_object()
        .and_then(|o| o.values().next().cloned())
        .unwrap_or(Value::Null);
    let mut config = config;
    if let Value::Object(o) = &mut config {
        o.insert("threads".into(), json!(cli.threads));
    }
    match &cli.command {
        Command::Sample(a) => {
            let model = ctx.model(&a.model)?;
            let out = sample_sequence(&model, a.n, a.seed)?;
            let mut buf = Vec::new();
            write_observations(&mut buf, out.observations.values(), a.format.into())?;
            write_atomic(&a.output, &buf)?;
            let mut outputs = vec![a.output.as_path()];
            if let Some(p) = &a.states {
                let mut sbuf = Vec::new();
                write_states(&mut sbuf, &out.states)?;
                write_atomic(p, &sbuf)?;
                outputs.push(p.as_path());
            }
            finish(cli, ctx, "sample", config, Some(a.seed), &outputs[..1])?;
            Ok(0)
        }
        Command::Filter(a) => {
            let model = ctx.model(&a.model)?;
            let obs = ctx.obs(&a.obs, a.obs_format)?;
            let text = if a.stream {
                let s = forward_filter_streaming(&model, &obs)?;
                serde_json::to_string(&json!({"log_likelihood": s.log_likelihood, "n": s.n}))? + "\n"
            } else {
                filter_csv(&model, &obs)?
            };
            emit(a.output.as_deref(), &text)?;
            finish(cli, ctx, "filter", config, None, a.output.as_deref().as_slice())?;
            Ok(0)
        }
        Command::Gap(a) => {
            let model = ctx.model(&a.model)?;
            let (obs, sim_seed) = match (&a.obs, &a.simulate) {
                (Some(p), _) => (ctx.obs(p, a.obs_format)?, None),
                (None, Some(v)) => {
                    let (n, s) = (v[0] as usize, v[1]);
                    (sample_sequence(&model, n, s)?.observations, Some(s))
                }
                (None, None) => unreachable!("clap requires one of --obs, --simulate"),
            };
            let estimates = run_gap(&model, &obs, a)?;
            let tau = tau_bound_log(model.transition());
            let rows: Vec<Value> = estimates
                .iter()
                .map(|e| gap_json(e, a.epsilon, obs.len(), tau))
                .collect::<Result<_>>()?;
            let v = if rows.len() == 1 {
                rows.into_iter().next().unwrap_or(Value::Null)
            } else {
                Value::Array(rows)
            };
            emit(a.output.as_deref(), &(serde_json::to_string_pretty(&v)? + "\n"))?;
            finish(cli, ctx, "gap", config, sim_seed.or(Some(a.seed)), a.output.as_deref().as_slice())?;
            Ok(0)
        }
        Command::SyncDemo(a) => {
            let model = ctx.model(&a.model)?;
            let text = sync_csv(&model, a)?;
            emit(a.output.as_deref(), &text)?;
            finish(cli, ctx, "sync-demo", config, Some(a.seed), a.output.as_deref().as_slice())?;
            Ok(0)
        }
        Command::Tau(a) => {
            let model = ctx.model(&a.model)?;
            let m = model.transition();
            let v = json!({
                "phi": birkhoff_phi(m),
                "tau": birkhoff_tau(m),
                "tau_bound_log": tau_bound_log(m),
            });
            emit(a.output.as_deref(), &(serde_json::to_string_pretty(&v)? + "\n"))?;
            finish(cli, ctx, "tau", config, None, a.output.as_deref().as_slice())?;
            Ok(0)
        }
        Command::Infer(a) => {
            let model = ctx.model(&a.model)?;
            let obs = ctx.obs(&a.obs, a.obs_format)?;
            let sel = ParamSelector::parse(&a.free)?;
            sel.check(&model)?;
            let start = match &a.start {
                Some(s) => sel.set_natural(&model, &parse_list(s)?)?,
                None => model,
            };
            let buffer = if a.buffer == "auto" {
                BufferChoice::Auto
            } else {
                let b: usize = a.buffer.parse().map_err(|_| {
                    Error::InvalidInput(format!("--buffer must be `auto` or an integer, got {:?}", a.buffer))
                })?;
                BufferChoice::Fixed { b1: b, b2: b }
            };
            let cfg = SgdConfig {
                eta0: a.eta0,
                decay: a.decay,
                steps_per_restart: a.steps_per_restart,
                restart_threshold: a.restart_threshold,
                batch_size: a.batch,
                buffer,
                epsilon: a.epsilon,
                seed: a.seed,
                eta_schedule: match a.eta_schedule {
                    ScheduleArg::PerRestart => EtaSchedule::PerRestart,
                    ScheduleArg::Global => EtaSchedule::Global,
                },
                max_restarts: a.max_restarts,
                non_overlapping: a.non_overlapping,
                ..SgdConfig::default()
            };
            let result = sgd_infer(&start, &obs, &sel, &cfg)?;
            let names = sel.names(start.n_states());
            if let Some(p) = &a.trace {
                let mut t = String::from("restart,step");
                for n in &names {
                    let _ = write!(t, ",{n}");
                }
                t.push_str(",eta,probe_loglik\n");
                for row in &result.trace {
                    let _ = write!(t, "{},{}", row.restart, row.step);
                    for v in &row.theta {
                        let _ = write!(t, ",{v:?}");
                    }
                    let _ = writeln!(t, ",{:?},{:?}", row.eta, row.probe_loglik);
                }
                write_atomic(p, t.as_bytes())?;
            }
            let v = json!({
                "theta_hat": result.theta_hat,
                "names": names,
                "multiplies": result.multiplies,
                "gap_multiplies": result.gap_multiplies,
                "buffers": [result.buffers.0, result.buffers.1],
                "restarts": result.restarts,
                "converged": result.converged,
            });
            emit(a.output.as_deref(), &(serde_json::to_string_pretty(&v)? + "\n"))?;
            let mut outputs: Vec<&Path> = a.output.as_deref().into_iter().collect();
            outputs.extend(a.trace.as_deref());
            finish(cli, ctx, "infer", config, Some(a.seed), &outputs)?;
            if !result.converged {
                eprintln!(
                    "error: no convergence after {} restarts; last estimate written",
                    result.restarts
                );
                return Ok(2);
            }
            Ok(0)
        }
    }
}

fn filter_csv(model: &HmmModel, obs: &ObservationSequence) -> Result<String> {
    let run = forward_filter(model, obs)?;
    let k = model.n_states();
    let mut t = String::from("step");
    for i in 1..=k {
        let _ = write!(t, ",rho_{i}");
    }
    t.push_str(",log_norm\n");
    for (step, (rho, ln)) in run.rhos.iter().zip(&run.per_step_log_norms).enumerate() {
        let _ = write!(t, "{}", step + 1);
        for v in rho.probs() {
            let _ = write!(t, ",{v:?}");
        }
        let _ = writeln!(t, ",{ln:?}");
    }
    let _ = writeln!(t, "log_likelihood,{:?}", run.log_likelihood);
    Ok(t)
}

fn run_gap(model: &HmmModel, obs: &ObservationSequence, a: &GapArgs) -> Result<Vec<GapEstimate>> {
    let jac = || match a.direction {
        DirectionArg::Forward => estimate_gap(model, obs, a.burn_in, a.seed),
        DirectionArg::Backward => estimate_backward_gap(model, obs, a.burn_in, a.seed),
    };
    Ok(match a.method {
        MethodArg::Jacobian => vec![jac()?],
        MethodArg::Qr => vec![qr_gap(model, obs, a.burn_in)?],
        MethodArg::Trajectory => vec![trajectory_gap(model, obs, a.burn_in, a.seed)?],
        MethodArg::All => vec![
            jac()?,
            qr_gap(model, obs, a.burn_in)?,
            trajectory_gap(model, obs, a.burn_in, a.seed)?,
        ],
    })
}

fn gap_json(e: &GapEstimate, epsilon: f64, n: usize, tau: Option<f64>) -> Result<Value> {
    let b = e.buffer_length(epsilon)?;
    Ok(json!({
        "gap": if e.gap.is_finite() { json!(e.gap) } else { json!("-inf") },
        "buffer_length": b,
        "method": e.method.as_str(),
        "direction": e.direction,
        "n": n,
        "tau_bound_log": tau,
        "iterations": e.iterations,
        "floor_hits": e.floor_hits,
    }))
}

fn sync_csv(model: &HmmModel, a: &SyncArgs) -> Result<String> {
    let k = model.n_states();
    let start_a = match &a.start_a {
        Some(s) => StateDistribution::new(parse_list(s)?)?,
        None => StateDistribution::uniform(k),
    };
    let start_b = match &a.start_b {
        Some(s) => StateDistribution::new(parse_list(s)?)?,
        None => {
            let mut v = vec![0.0; k];
            v[0] = 1.0;
            StateDistribution::new(v)?
        }
    };
    if a.steps == 0 {
        return Err(Error::InvalidInput("--steps must be positive".into()));
    }
    let total = a.seeds.max(a.mean_seeds);
    let series: Vec<(Vec<f64>, Vec<f64>)> = {
        use rayon::prelude::*;
        (0..total)
            .into_par_iter()
            .map(|i| {
                let s = sample_sequence(model, a.steps, derive_seed(a.seed, i))?;
                Ok((
                    trajectory_distances(model, &s.observations, &start_a, &start_b)?,
                    separation_distances(model, &s.observations, &start_a, &start_b)?,
                ))
            })
            .collect::<Result<_>>()?
    };
    // individual sequences: direct differences, cut off at round-off level
    let mut t = String::from("seed,step,log_distance_over_n\n");
    for (i, (raw, _)) in series.iter().enumerate().take(a.seeds as usize) {
        for (step, v) in raw.iter().enumerate() {
            if *v < TRAJECTORY_CUTOFF {
                break;
            }
            let _ = writeln!(t, "{i},{},{:?}", step + 1, v.ln() / (step + 1) as f64);
        }
    }
    // mean curve: average of (1/n) ln separation over all sequences, using
    // the cancellation-free separation so no sequence drops out
    let m = a.mean_seeds as usize;
    if m > 0 {
        for step in 0..a.steps {
            let mean = series[..m].iter().map(|(_, sep)| sep[step].ln()).sum::<f64>()
                / (m * (step + 1)) as f64;
            if !mean.is_finite() {
                break;
            }
            let _ = writeln!(t, "mean,{},{:?}", step + 1, mean);
        }
    }
    Ok(t)
}
