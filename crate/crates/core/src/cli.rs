//! The `smallbatch` command line.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 when a
//! run fails. Tables go to stdout; `--out`/`--svg` write files.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::halflife::{beta_to_halflife, halflife_to_beta, scale_beta2, DecayRate, TokenHalfLife, TokensPerStep};
use crate::harness::config::set_path;
use crate::harness::emit::{emit_csv, emit_svg_lines, emit_table, loss_series, Axes, Series};
use crate::harness::toy::relative_gap;
use crate::harness::{
    sensitivity, sweep, toy_experiment, train, GridSpec, OptimizerSpec, RunCache, RunConfig, SensitivitySpec,
    Target, ToySpec,
};
use crate::memory::{estimate_memory, fits, ModelDims, GB};
use crate::models::{NoiseMode, ToyProblem};
use crate::optim::{OptimizerConfig, Variant};
use crate::units::{fmt_sig9, TokenAmount, TokenCount};

#[derive(Debug, Parser)]
#[command(name = "smallbatch", version, about = "Token half-lives, optimizer memory, and batch-size experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a decay rate to a token half-life, or back.
    Halflife(HalflifeArgs),
    /// Rescale beta2 to keep its token half-life when the batch size changes.
    #[command(name = "scale-beta2")]
    ScaleBeta2(ScaleArgs),
    /// Estimate the training memory floor.
    Memory(MemoryArgs),
    /// Train the MLP on the Markov task for a fixed token budget.
    Train(TrainArgs),
    /// Run a grid of training configurations.
    Sweep(SweepArgs),
    /// Sweep one hyperparameter around a base configuration.
    Sensitivity(SensitivityArgs),
    /// SGD with and without momentum on the noisy quadratic x + 10 y^2.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
pub struct HalflifeArgs {
    /// Decay rate per optimizer step, in (0, 1) [unitless]
    #[arg(long, conflicts_with = "tokens", required_unless_present = "tokens")]
    pub beta: Option<f64>,
    /// Half-life to convert to a decay rate [tokens; k/M/B suffixes allowed]
    #[arg(long)]
    pub tokens: Option<TokenAmount>,
    /// Batch size [sequences per step]
    #[arg(long)]
    pub batch: u64,
    /// Sequence length [tokens per sequence]
    #[arg(long)]
    pub seq_len: u64,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Decay rate at the original batch size [unitless]
    #[arg(long)]
    pub beta2: f64,
    /// Original batch size [sequences per step]
    #[arg(long)]
    pub from_batch: u64,
    /// New batch size [sequences per step]
    #[arg(long)]
    pub to_batch: u64,
    /// Sequence length for both batch sizes [tokens per sequence]
    #[arg(long)]
    pub seq_len: u64,
    /// Sequence length at the new batch size, if different [tokens per sequence]
    #[arg(long)]
    pub to_seq_len: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MemoryArgs {
    /// Total parameter count; layer shapes of the 13B preset are used for activations [parameters; k/M/B suffixes allowed]
    #[arg(long)]
    pub params: Option<TokenCount>,
    /// Model shape preset: small-30m, t5-19m, gpt2-124m, gpt3-1.3b, gpt3-13b
    #[arg(long, default_value = "gpt3-13b")]
    pub preset: String,
    /// Optimizer: sgd, adam, adafactor or muon
    #[arg(long, default_value = "adam")]
    pub optimizer: Variant,
    /// SGD momentum; a nonzero value adds one state value per parameter [unitless]
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    /// Bytes per stored value: 2, 4 or 8 [bytes]
    #[arg(long, default_value_t = 2)]
    pub bytes: u64,
    /// Device memory [GB, 1 GB = 1e9 bytes]
    #[arg(long, default_value_t = 40.0)]
    pub device_gb: f64,
    /// Tokens per micro-batch, resident as checkpointed activations [tokens; k/M/B suffixes allowed]
    #[arg(long, default_value = "4096")]
    pub batch_tokens: TokenCount,
    /// Accumulate gradients across micro-batches (adds a full gradient buffer)
    #[arg(long)]
    pub accumulation: bool,
}

/// Flags shared by commands that build run configurations.
#[derive(Debug, Args, Default)]
pub struct RunOverrides {
    /// Optimizer: sgd, adam, adafactor or muon
    #[arg(long)]
    pub optimizer: Option<Variant>,
    /// Peak learning rate [unitless]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Micro-batch size [sequences]
    #[arg(long)]
    pub batch_size: Option<u64>,
    /// Sequence length [tokens]
    #[arg(long)]
    pub seq_len: Option<u64>,
    /// Training budget [tokens; k/M/B suffixes allowed]
    #[arg(long)]
    pub token_budget: Option<TokenCount>,
    /// Micro-batches per optimizer step [count]
    #[arg(long)]
    pub accum_steps: Option<u64>,
    /// First-moment decay per step [unitless]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Second-moment decay per step [unitless]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// First-moment half-life [tokens; k/M/B suffixes allowed]
    #[arg(long)]
    pub t1_tokens: Option<TokenAmount>,
    /// Second-moment half-life [tokens; k/M/B suffixes allowed]
    #[arg(long)]
    pub t2_tokens: Option<TokenAmount>,
    /// SGD momentum or Muon buffer decay [unitless]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Decoupled weight decay coefficient [unitless]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Held-out evaluation size [tokens; k/M/B suffixes allowed]
    #[arg(long)]
    pub eval_tokens: Option<TokenCount>,
    /// Evaluation interval [tokens; k/M/B suffixes allowed; default a tenth of the budget]
    #[arg(long)]
    pub eval_every_tokens: Option<TokenCount>,
}

impl RunOverrides {
    fn apply(&self, v: &mut Value, prefix: &str) -> Result<()> {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        let mut set = |k: &str, val: Value| set_path(v, &key(k), val);
        if let Some(x) = self.optimizer {
            set("optimizer.variant", json!(x))?;
        }
        if let Some(x) = self.lr {
            set("optimizer.lr", json!(x))?;
        }
        if let Some(x) = self.batch_size {
            set("batch_size", json!(x))?;
        }
        if let Some(x) = self.seq_len {
            set("seq_len", json!(x))?;
        }
        if let Some(x) = self.token_budget {
            set("token_budget", json!(x.get()))?;
        }
        if let Some(x) = self.accum_steps {
            set("accum_steps", json!(x))?;
        }
        if let Some(x) = self.momentum {
            set("optimizer.momentum", json!(x))?;
        }
        if let Some(x) = self.weight_decay {
            set("optimizer.weight_decay", json!(x))?;
        }
        if let Some(x) = self.eval_tokens {
            set("eval_tokens", json!(x.get()))?;
        }
        if let Some(x) = self.eval_every_tokens {
            set("eval_every_tokens", json!(x.get()))?;
        }
        // A flag replaces either form of the same decay rate.
        for (beta, t, bkey, tkey) in [
            (self.beta1, self.t1_tokens, "beta1", "t1_tokens"),
            (self.beta2, self.t2_tokens, "beta2", "t2_tokens"),
        ] {
            if beta.is_some() && t.is_some() {
                return Err(Error::config(tkey, format!("give either --{bkey} or --{}, not both", tkey.replace('_', "-"))));
            }
            if beta.is_none() && t.is_none() {
                continue;
            }
            let opt = key("optimizer");
            if let Some(obj) = pointer_mut(v, &opt).and_then(Value::as_object_mut) {
                obj.remove(bkey);
                obj.remove(tkey);
            }
            if let Some(b) = beta {
                set_path(v, &format!("{opt}.{bkey}"), json!(b))?;
            }
            if let Some(t) = t {
                set_path(v, &format!("{opt}.{tkey}"), json!(t.0))?;
            }
        }
        Ok(())
    }
}

fn pointer_mut<'a>(v: &'a mut Value, dotted: &str) -> Option<&'a mut Value> {
    v.pointer_mut(&format!("/{}", dotted.replace('.', "/")))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: RunOverrides,
    /// Seed for data, initialization and evaluation [integer; default from config, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV of run records
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG chart of eval loss against tokens
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON grid: {"base": <run config>, "axes": {"optimizer.lr": [...], ...}}
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: RunOverrides,
    /// Seed applied to every run [integer; default from config, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent runs [count]
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// CSV of run records for every config
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG chart of eval loss against tokens
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// JSON: {"base": <run config>, "target": "lr", "multipliers": [...]}
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: RunOverrides,
    /// Hyperparameter to scale: lr, t1, t2, beta1 or beta2
    #[arg(long)]
    pub target: Option<Target>,
    /// Comma-separated multipliers, must include 1 [unitless]
    #[arg(long, value_delimiter = ',')]
    pub multipliers: Option<Vec<f64>>,
    /// Seed applied to every run [integer; default from config, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent runs [count]
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// CSV of run records for every point
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG chart of final eval loss against multiplier
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// JSON toy configuration; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise standard deviation of the gradient multiplier [unitless]
    #[arg(long, conflicts_with = "snr")]
    pub sigma: Option<f64>,
    /// Signal-to-noise ratio, sigma = 1 / snr [unitless]
    #[arg(long)]
    pub snr: Option<f64>,
    /// Optimization steps [count]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Comma-separated learning rates [unitless]
    #[arg(long, value_delimiter = ',')]
    pub lrs: Option<Vec<f64>>,
    /// Comma-separated momentum values [unitless]
    #[arg(long, value_delimiter = ',')]
    pub momenta: Option<Vec<f64>>,
    /// Independent noise sequences per cell [count, at least 8]
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Base seed of the noise stream [integer; default from config, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise per gradient evaluation (scalar) or per component (per-component)
    #[arg(long)]
    pub noise: Option<NoiseArg>,
    /// CSV of quartiles per (lr, momentum)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG chart of median final loss against lr
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum NoiseArg {
    Scalar,
    PerComponent,
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out` and errors to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return 2;
            }
            let _ = write!(out, "{text}");
            return 0;
        }
    };
    match execute(&cli.command, out) {
        Ok(code) => code,
        // reader went away, e.g. piped into `head`
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Halflife(a) => cmd_halflife(a, out),
        Command::ScaleBeta2(a) => cmd_scale(a, out),
        Command::Memory(a) => cmd_memory(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Sensitivity(a) => cmd_sensitivity(a, out),
        Command::Toy(a) => cmd_toy(a, out),
    }
}

fn cmd_halflife(a: &HalflifeArgs, out: &mut dyn Write) -> Result<i32> {
    let tps = TokensPerStep::new(a.batch, a.seq_len)?;
    match (a.beta, a.tokens) {
        (Some(beta), _) => {
            let t = beta_to_halflife(DecayRate::new(beta)?, tps);
            writeln!(out, "{}", fmt_sig9(t.tokens()))?;
        }
        (None, Some(t)) => {
            let beta = halflife_to_beta(TokenHalfLife::new(t.0)?, tps)?;
            writeln!(out, "{}", fmt_sig9(beta.get()))?;
        }
        (None, None) => return Err(Error::config("beta", "give --beta or --tokens")),
    }
    Ok(0)
}

fn cmd_scale(a: &ScaleArgs, out: &mut dyn Write) -> Result<i32> {
    let old = TokensPerStep::new(a.from_batch, a.seq_len)?;
    let new = TokensPerStep::new(a.to_batch, a.to_seq_len.unwrap_or(a.seq_len))?;
    let beta = scale_beta2(DecayRate::new(a.beta2)?, old, new)?;
    writeln!(out, "{:.6}", beta.get())?;
    Ok(0)
}

pub fn preset(name: &str) -> Result<ModelDims> {
    match name {
        "small-30m" => Ok(ModelDims::small_30m()),
        "t5-19m" => Ok(ModelDims::t5_19m()),
        "gpt2-124m" => Ok(ModelDims::gpt2_124m()),
        "gpt3-1.3b" => Ok(ModelDims::gpt3_1_3b()),
        "gpt3-13b" => Ok(ModelDims::gpt3_13b()),
        other => Err(Error::config(
            "preset",
            format!("unknown preset `{other}` (expected small-30m, t5-19m, gpt2-124m, gpt3-1.3b or gpt3-13b)"),
        )),
    }
}

fn cmd_memory(a: &MemoryArgs, out: &mut dyn Write) -> Result<i32> {
    let mut dims = preset(&a.preset)?;
    if let Some(p) = a.params {
        dims = dims.with_override(p.get());
    }
    if !(a.device_gb.is_finite() && a.device_gb > 0.0) {
        return Err(Error::config("device_gb", "must be positive"));
    }
    let opt = OptimizerConfig::default_for(a.optimizer, 1e-3).with_momentum(a.momentum);
    opt.validate()?;
    let est = estimate_memory(&dims, &opt, a.batch_tokens.get(), a.bytes, a.accumulation)?;
    let device = (a.device_gb * GB).round() as u64;
    for (name, bytes) in est.components() {
        writeln!(out, "{name}: {} GB", fmt_sig9(bytes as f64 / GB))?;
    }
    writeln!(out, "device: {} GB", fmt_sig9(a.device_gb))?;
    writeln!(out, "fits: {}", fits(&est, device))?;
    Ok(0)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
}

fn default_run_value() -> Value {
    RunConfig::new(OptimizerSpec::new(Variant::Adam, 1e-3), 64, 128, 2_000_000).to_value()
}

fn resolve_seed(v: &mut Value, path: &str, seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        set_path(v, path, json!(s))?;
        return Ok(s);
    }
    let found = pointer_mut(v, path).and_then(|x| x.as_u64()).unwrap_or(0);
    Ok(found)
}

fn write_loss_svg(path: &Path, runs: &[(&RunConfig, &crate::harness::RunOutput)]) -> Result<()> {
    let axes = Axes {
        title: "eval loss".into(),
        x_label: "tokens".into(),
        y_label: "eval loss [nats]".into(),
        log_x: true,
        log_y: false,
    };
    emit_svg_lines(path, &loss_series(runs), &axes)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut v = match &a.config {
        Some(p) => read_json(p)?,
        None => default_run_value(),
    };
    a.overrides.apply(&mut v, "")?;
    let seed = resolve_seed(&mut v, "seed", a.seed)?;
    let cfg = RunConfig::from_value(v)?;
    writeln!(out, "seed: {seed}")?;
    let run = train(&cfg)?;
    writeln!(out, "config_id: {}", run.config_id)?;
    writeln!(out, "{:>10} {:>14} {:>12} {:>12}", "step", "tokens_seen", "train_loss", "eval_loss")?;
    for r in &run.records {
        writeln!(
            out,
            "{:>10} {:>14} {:>12} {:>12}",
            r.step,
            r.tokens_seen,
            fmt_sig9(r.train_loss),
            r.eval_loss.map(fmt_sig9).unwrap_or_default()
        )?;
    }
    writeln!(out, "final_eval_loss: {}", fmt_sig9(run.final_eval_loss))?;
    if run.diverged {
        writeln!(out, "diverged: true")?;
    }
    if let Some(p) = &a.out {
        emit_csv(p, &[(&cfg, &run)])?;
    }
    if let Some(p) = &a.svg {
        write_loss_svg(p, &[(&cfg, &run)])?;
    }
    Ok(0)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let mut v = read_json(&a.config)?;
    let base = v
        .get_mut("base")
        .ok_or_else(|| Error::config("base", "grid file needs a `base` run config"))?;
    a.overrides.apply(base, "")?;
    let seed = resolve_seed(base, "seed", a.seed)?;
    let grid: GridSpec = serde_json::from_value(v)?;
    let configs = grid.expand()?;
    writeln!(out, "seed: {seed}")?;
    let table = sweep(&configs, a.jobs, &RunCache::new())?;
    writeln!(out, "{:<48} {:>14} {:>5}", "config_id", "final_eval", "best")?;
    for row in &table.rows {
        let loss = match &row.outcome {
            Ok(r) => fmt_sig9(r.final_eval_loss),
            Err(_) => "error".into(),
        };
        writeln!(out, "{:<48} {:>14} {:>5}", row.config_id, loss, if row.best_in_slice { "*" } else { "" })?;
    }
    let ok: Vec<_> = table
        .rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|o| (&r.config, o.as_ref())))
        .collect();
    if let Some(p) = &a.out {
        emit_csv(p, &ok)?;
    }
    if let Some(p) = &a.svg {
        write_loss_svg(p, &ok)?;
    }
    let mut failed = false;
    for (id, e) in table.failures() {
        writeln!(out, "failed {id}: {e}")?;
        failed = true;
    }
    Ok(if failed { 1 } else { 0 })
}

fn cmd_sensitivity(a: &SensitivityArgs, out: &mut dyn Write) -> Result<i32> {
    let mut v = read_json(&a.config)?;
    let base = v
        .get_mut("base")
        .ok_or_else(|| Error::config("base", "sensitivity file needs a `base` run config"))?;
    a.overrides.apply(base, "")?;
    let seed = resolve_seed(base, "seed", a.seed)?;
    if let Some(t) = a.target {
        set_path(&mut v, "target", json!(t))?;
    }
    if let Some(ms) = &a.multipliers {
        set_path(&mut v, "multipliers", json!(ms))?;
    }
    let spec: SensitivitySpec = serde_json::from_value(v)?;
    writeln!(out, "seed: {seed}")?;
    let curve = sensitivity(&spec, a.jobs, &RunCache::new())?;
    writeln!(out, "target: {}", curve.target)?;
    writeln!(out, "{:>12} {:>14}", "multiplier", "final_eval")?;
    for p in &curve.points {
        let loss = match (p.loss, &p.reason) {
            (Some(l), _) => fmt_sig9(l),
            (None, Some(r)) => format!("absent ({r})"),
            (None, None) => "absent".into(),
        };
        writeln!(out, "{:>12} {:>14}", fmt_sig9(p.multiplier), loss)?;
    }
    writeln!(out, "robustness_score: {}", fmt_sig9(curve.score))?;
    if let Some(p) = &a.out {
        let ok: Vec<_> = curve
            .table
            .rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|o| (&r.config, o.as_ref())))
            .collect();
        emit_csv(p, &ok)?;
    }
    if let Some(p) = &a.svg {
        let series = Series {
            label: spec.base.config_id(),
            points: curve.points.iter().filter_map(|p| p.loss.map(|l| (p.multiplier, l))).collect(),
        };
        let axes = Axes {
            title: format!("{} sensitivity", curve.target),
            x_label: format!("{} multiplier", curve.target),
            y_label: "final eval loss [nats]".into(),
            log_x: true,
            log_y: false,
        };
        emit_svg_lines(p, &[series], &axes)?;
    }
    Ok(0)
}

fn default_toy_value() -> Value {
    let lrs: Vec<f64> = (-12..=0).map(|k| 2f64.powi(k)).collect();
    serde_json::to_value(ToySpec::new(0.2, 10, lrs, vec![0.0, 0.9], 64)).expect("toy spec serializes")
}

fn cmd_toy(a: &ToyArgs, out: &mut dyn Write) -> Result<i32> {
    let mut v = match &a.config {
        Some(p) => read_json(p)?,
        None => default_toy_value(),
    };
    if let Some(s) = a.sigma {
        set_path(&mut v, "sigma", json!(s))?;
    }
    if let Some(snr) = a.snr {
        if !(snr.is_finite() && snr > 0.0) {
            return Err(Error::config("snr", "must be positive"));
        }
        set_path(&mut v, "sigma", json!(ToyProblem::sigma_for_snr(snr)))?;
    }
    if let Some(s) = a.steps {
        set_path(&mut v, "n_steps", json!(s))?;
    }
    if let Some(l) = &a.lrs {
        set_path(&mut v, "lrs", json!(l))?;
    }
    if let Some(m) = &a.momenta {
        set_path(&mut v, "momenta", json!(m))?;
    }
    if let Some(n) = a.seeds {
        set_path(&mut v, "n_seeds", json!(n))?;
    }
    if let Some(n) = a.noise {
        let mode = match n {
            NoiseArg::Scalar => NoiseMode::Scalar,
            NoiseArg::PerComponent => NoiseMode::PerComponent,
        };
        set_path(&mut v, "noise_mode", json!(mode))?;
    }
    let seed = resolve_seed(&mut v, "seed", a.seed)?;
    let spec: ToySpec = serde_json::from_value(v)?;
    writeln!(out, "seed: {seed}")?;
    let result = toy_experiment(&spec)?;
    writeln!(
        out,
        "{:>12} {:>9} {:>14} {:>14} {:>14} {:>8}",
        "lr", "momentum", "loss_q25", "loss_q50", "loss_q75", "flips50"
    )?;
    let mut rows = Vec::new();
    for c in &result.cells {
        writeln!(
            out,
            "{:>12} {:>9} {:>14} {:>14} {:>14} {:>8}",
            fmt_sig9(c.lr),
            fmt_sig9(c.momentum),
            fmt_sig9(c.final_loss.q25),
            fmt_sig9(c.final_loss.q50),
            fmt_sig9(c.final_loss.q75),
            fmt_sig9(c.sign_flips.q50)
        )?;
        rows.push(vec![
            fmt_sig9(spec.sigma),
            spec.n_steps.to_string(),
            fmt_sig9(c.lr),
            fmt_sig9(c.momentum),
            fmt_sig9(c.final_loss.q25),
            fmt_sig9(c.final_loss.q50),
            fmt_sig9(c.final_loss.q75),
            fmt_sig9(c.sign_flips.q25),
            fmt_sig9(c.sign_flips.q50),
            fmt_sig9(c.sign_flips.q75),
        ]);
    }
    for b in &result.best {
        writeln!(
            out,
            "best momentum={} lr={} median_loss={}",
            fmt_sig9(b.momentum),
            fmt_sig9(b.lr),
            fmt_sig9(b.median_loss)
        )?;
    }
    if let [a0, a1] = result.best.as_slice() {
        writeln!(out, "relative_gap: {}", fmt_sig9(relative_gap(a0.median_loss, a1.median_loss)))?;
    }
    if let Some(p) = &a.out {
        emit_table(
            p,
            &[
                "sigma", "n_steps", "lr", "momentum", "loss_q25", "loss_q50", "loss_q75", "flips_q25", "flips_q50",
                "flips_q75",
            ],
            &rows,
        )?;
    }
    if let Some(p) = &a.svg {
        let series: Vec<Series> = spec
            .momenta
            .iter()
            .map(|&m| Series {
                label: format!("momentum {}", fmt_sig9(m)),
                points: result
                    .cells
                    .iter()
                    .filter(|c| c.momentum == m)
                    .map(|c| (c.lr, c.final_loss.q50))
                    .collect(),
            })
            .collect();
        let axes = Axes {
            title: format!("noisy quadratic, sigma {}, {} steps", fmt_sig9(spec.sigma), spec.n_steps),
            x_label: "lr".into(),
            y_label: "median final loss".into(),
            log_x: true,
            log_y: false,
        };
        emit_svg_lines(p, &series, &axes)?;
    }
    Ok(0)
}
