//! Command-line surface. Every command resolves its options from flags over
//! an optional JSON config file, runs, and writes a run manifest next to its
//! outputs whether it succeeds or fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{param, DohaError, Result};
use crate::harmonizer::{harmonize_step_with, HarmonizerConfig, Mode, NormQueue};
use crate::io;
use crate::report::{self, Column};
use crate::signal::{synth_ppg, SynthSpec};
use crate::ssp::{autocorr_seq, build_ssp, invert_hr, phase_invariance_report, DelayMode, DEFAULT_L_WIN};
use crate::toy::corpus::{Corpus, CorpusItem};
use crate::toy::eval::{hr_metrics, predict_hr};
use crate::toy::model::{Clip, ToyModel};
use crate::toy::scenario::Scenario;
use crate::toy::train::train;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "DOHA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "doha", version, about = "Self-similarity pulse maps and gradient harmonization")]
pub struct Cli {
    /// JSON file with option values; flags given on the command line win.
    /// Keys may sit at the top level or under a section named after the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the first output, or
    /// `<command>.manifest.json` in the working directory).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pulse signal.
    Synth(SynthArgs),
    /// Build the self-similarity map of a signal and read its heart rate.
    Ssp(SspArgs),
    /// Run one harmonization step over a gradient batch.
    Harmonize(HarmonizeArgs),
    /// Generate a multi-domain training/evaluation corpus.
    Corpus(CorpusArgs),
    /// Train the toy model with one leave-one-domain-out split.
    Train(TrainArgs),
    /// Score a trained model on a corpus.
    Eval(EvalArgs),
    /// Chart metrics files against each other.
    Report(ReportArgs),
    /// Map deviation under a range of label delays.
    DelaySweep(DelaySweepArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthArgs {
    /// Heart rate in bpm, within [42, 210].
    #[arg(long)]
    pub hr: Option<f64>,
    /// Sampling rate in Hz [default: 30].
    #[arg(long)]
    pub fs: Option<f64>,
    /// Number of samples [default: 300].
    #[arg(long)]
    pub frames: Option<usize>,
    /// Gaussian noise standard deviation [default: 0].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Circular delay of the pulse in samples [default: 0].
    #[arg(long)]
    pub delay: Option<usize>,
    /// Relative amplitudes of harmonics 2..K, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub harmonics: Option<Vec<f64>>,
    /// Linear trend per sample [default: 0].
    #[arg(long)]
    pub trend: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; `.csv` writes `t,value`, anything else JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SspArgs {
    /// Input signal (JSON, or CSV together with --fs).
    #[arg(long = "in")]
    #[serde(alias = "in")]
    pub input: Option<PathBuf>,
    /// Sampling rate for CSV input.
    #[arg(long)]
    pub fs: Option<f64>,
    /// Window length in samples [default: 17].
    #[arg(long)]
    pub lwin: Option<usize>,
    /// Band-pass the signal to [0.7, 3.5] Hz before building the map.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bandpass: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_map: Option<PathBuf>,
    #[arg(long)]
    pub out_seq: Option<PathBuf>,
    /// JSON file receiving `{"hr_bpm": ...}`.
    #[arg(long)]
    pub out_hr: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonizeArgs {
    /// Gradient batch (`DOHAGRAD` binary or CSV, one instance per row).
    #[arg(long)]
    pub grads: Option<PathBuf>,
    /// Norm-queue snapshot to start from (CSV, oldest first).
    #[arg(long)]
    pub queue: Option<PathBuf>,
    /// Percentage of largest historical norms that triggers sifting [default: 5].
    #[arg(long = "t", alias = "t-percent")]
    #[serde(alias = "t")]
    pub t_percent: Option<f64>,
    /// [default: 150]
    #[arg(long)]
    pub queue_len: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Optimizer step index keying the projection order [default: 0].
    #[arg(long)]
    pub step: Option<u64>,
    /// plain-mean, ggh-only, igh-only or full-doha [default: full-doha].
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Project against sifted rather than raw gradients.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub exclude_sifted_targets: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Update vector, written as a one-row CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Queue snapshot after the step.
    #[arg(long)]
    pub out_queue: Option<PathBuf>,
    /// JSON step report (kept flags, zeroed ids, threshold, projections).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusArgs {
    /// Output directory; receives `train/`, `eval/` and `scenario.json`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Scenario JSON replacing the built-in reference scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub per_domain: Option<usize>,
    #[arg(long)]
    pub eval_per_domain: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    /// Directory written by `corpus` (or a single corpus directory).
    #[arg(long)]
    pub corpus_dir: Option<PathBuf>,
    /// Held-out domain, by name or index [default: the last domain].
    #[arg(long)]
    pub holdout: Option<String>,
    /// [default: full-doha]
    #[arg(long)]
    pub mode: Option<Mode>,
    /// [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long = "t", alias = "t-percent")]
    #[serde(alias = "t")]
    pub t_percent: Option<f64>,
    #[arg(long)]
    pub queue_len: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Receives `metrics_<mode>.csv` and `model_<mode>.json`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    /// Model JSON written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Corpus directory; with a `corpus` output, its `eval/` part is used.
    #[arg(long)]
    pub corpus_dir: Option<PathBuf>,
    /// Restrict scoring to one domain (name or index).
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-item predictions CSV `domain,item,true_hr,pred_hr`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics JSON.
    #[arg(long)]
    pub out_metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportArgs {
    /// Metrics CSV files, one series each.
    #[arg(long, num_args = 1..)]
    pub metrics: Option<Vec<PathBuf>>,
    /// Series labels (default: the mode column, else the file stem).
    #[arg(long, num_args = 1..)]
    pub labels: Option<Vec<String>>,
    /// train_loss, holdout_mae, holdout_rmse or holdout_r [default: holdout_mae].
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_svg: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DelaySweepArgs {
    /// [default: 72]
    #[arg(long)]
    pub hr: Option<f64>,
    /// [default: 30]
    #[arg(long)]
    pub fs: Option<f64>,
    /// [default: 300]
    #[arg(long)]
    pub frames: Option<usize>,
    /// [default: 17]
    #[arg(long)]
    pub lwin: Option<usize>,
    /// Delays in samples, comma separated [default: 0..=min(25, below two periods)].
    #[arg(long, value_delimiter = ',')]
    pub delays: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub harmonics: Option<Vec<f64>>,
    /// circular or truncation [default: circular].
    #[arg(long)]
    pub delay_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_svg: Option<PathBuf>,
}

// ------------------------------------------------------------------ manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub secs: f64,
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<PhaseTiming>,
    pub status: String,
    pub error: Option<String>,
}

struct Ctx {
    outputs: Vec<PathBuf>,
    timings: Vec<PhaseTiming>,
    /// Fully defaulted settings the command actually ran with.
    effective: Option<Value>,
}

impl Ctx {
    fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let started = Instant::now();
        let out = f();
        self.timings.push(PhaseTiming { phase: name.to_string(), secs: started.elapsed().as_secs_f64() });
        out
    }

    fn effective<T: Serialize>(&mut self, value: &T) {
        self.effective = serde_json::to_value(value).ok();
    }

    fn wrote(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }
}

// ------------------------------------------------------------------ config

fn normalize_keys(map: &Map<String, Value>) -> Map<String, Value> {
    map.iter().map(|(k, v)| (k.replace('-', "_"), v.clone())).collect()
}

/// Overlays explicitly given flags on config-file values.
fn resolve<T: Serialize + DeserializeOwned>(command: &str, flags: &T, config: Option<&Value>) -> Result<T> {
    let mut merged = Map::new();
    if let Some(cfg) = config {
        let Value::Object(top) = cfg else {
            return Err(DohaError::Format("config file must hold a JSON object".into()));
        };
        for (k, v) in normalize_keys(top) {
            if !v.is_object() {
                merged.insert(k, v);
            }
        }
        if let Some(Value::Object(section)) = top.get(command) {
            merged.extend(normalize_keys(section));
        }
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| DohaError::Format(format!("config: {e}")))
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| DohaError::Parameter(format!("missing required option --{flag}")))
}

fn manifest_beside(path: &Path, name: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".{name}.manifest.json"));
    PathBuf::from(s)
}

// ------------------------------------------------------------------ entry

/// Caps the global worker pool from `DOHA_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| DohaError::Parameter(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // Fails only if a pool already exists, e.g. when called twice in-process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs one parsed invocation, writing its manifest on every path.
pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref().map(io::read_json::<Value>);
    let mut ctx = Ctx { outputs: Vec::new(), timings: Vec::new(), effective: None };
    let started = Instant::now();
    let (name, outcome) = match &cli.command {
        Command::Synth(a) => ("synth", execute("synth", a, &config, &mut ctx, synth_manifest, cmd_synth)),
        Command::Ssp(a) => ("ssp", execute("ssp", a, &config, &mut ctx, ssp_manifest, cmd_ssp)),
        Command::Harmonize(a) => {
            ("harmonize", execute("harmonize", a, &config, &mut ctx, harmonize_manifest, cmd_harmonize))
        }
        Command::Corpus(a) => ("corpus", execute("corpus", a, &config, &mut ctx, corpus_manifest, cmd_corpus)),
        Command::Train(a) => ("train", execute("train", a, &config, &mut ctx, train_manifest, cmd_train)),
        Command::Eval(a) => ("eval", execute("eval", a, &config, &mut ctx, eval_manifest, cmd_eval)),
        Command::Report(a) => ("report", execute("report", a, &config, &mut ctx, report_manifest, cmd_report)),
        Command::DelaySweep(a) => {
            ("delay-sweep", execute("delay-sweep", a, &config, &mut ctx, sweep_manifest, cmd_delay_sweep))
        }
    };
    let Outcome { resolved, seed, default_manifest, result } = outcome;
    ctx.timings.push(PhaseTiming { phase: "total".into(), secs: started.elapsed().as_secs_f64() });
    let manifest = RunManifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: json!({ "options": resolved, "effective": ctx.effective }),
        outputs: ctx.outputs,
        timings: ctx.timings,
        status: if result.is_ok() { "ok" } else { "error" }.into(),
        error: result.as_ref().err().map(ToString::to_string),
    };
    let path = cli
        .manifest
        .clone()
        .or(default_manifest)
        .unwrap_or_else(|| PathBuf::from(format!("{name}.manifest.json")));
    let written = io::write_json(&path, &manifest);
    if result.is_ok() {
        written?;
    } else if let Err(e) = written {
        eprintln!("warning: could not write manifest {}: {e}", path.display());
    }
    result
}

struct Outcome {
    resolved: Value,
    seed: u64,
    default_manifest: Option<PathBuf>,
    result: Result<()>,
}

trait Seeded {
    fn seed(&self) -> Option<u64>;
}

macro_rules! seeded {
    ($($t:ty),*) => {$(impl Seeded for $t { fn seed(&self) -> Option<u64> { self.seed } })*};
}
seeded!(SynthArgs, SspArgs, HarmonizeArgs, CorpusArgs, TrainArgs, EvalArgs, ReportArgs, DelaySweepArgs);

fn execute<T>(
    command: &str,
    flags: &T,
    config: &Option<Result<Value>>,
    ctx: &mut Ctx,
    manifest_path: fn(&T) -> Option<PathBuf>,
    body: fn(&T, &mut Ctx) -> Result<()>,
) -> Outcome
where
    T: Serialize + DeserializeOwned + Seeded,
{
    let merged = match config {
        None => resolve(command, flags, None),
        Some(Ok(v)) => resolve(command, flags, Some(v)),
        Some(Err(e)) => Err(DohaError::Format(format!("config: {e}"))),
    };
    let args_for_manifest = merged.as_ref().unwrap_or(flags);
    let default_manifest = manifest_path(args_for_manifest);
    let resolved = serde_json::to_value(args_for_manifest).unwrap_or(Value::Null);
    let seed = args_for_manifest.seed().unwrap_or(0);
    let result = merged.and_then(|args| body(&args, ctx));
    Outcome { resolved, seed, default_manifest, result }
}

// ------------------------------------------------------------------ synth

fn synth_manifest(a: &SynthArgs) -> Option<PathBuf> {
    a.out.as_deref().map(|p| manifest_beside(p, "synth"))
}

fn cmd_synth(a: &SynthArgs, ctx: &mut Ctx) -> Result<()> {
    let spec = SynthSpec {
        hr_bpm: *required(&a.hr, "hr")?,
        fs: a.fs.unwrap_or(30.0),
        n_frames: a.frames.unwrap_or(300),
        harmonic_amps: a.harmonics.clone().unwrap_or_default(),
        noise_sigma: a.noise.unwrap_or(0.0),
        delay_samples: a.delay.unwrap_or(0),
        trend_slope: a.trend.unwrap_or(0.0),
        seed: a.seed.unwrap_or(0),
    };
    ctx.effective(&spec);
    let out = required(&a.out, "out")?;
    let signal = ctx.phase("synthesize", || synth_ppg(&spec))?;
    ctx.phase("write", || io::write_signal(out, &signal))?;
    ctx.wrote(out);
    println!("wrote {} samples to {}", signal.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------------ ssp

fn ssp_manifest(a: &SspArgs) -> Option<PathBuf> {
    [&a.out_map, &a.out_seq, &a.out_hr].into_iter().flatten().next().map(|p| manifest_beside(p, "ssp"))
}

fn cmd_ssp(a: &SspArgs, ctx: &mut Ctx) -> Result<()> {
    let input = required(&a.input, "in")?;
    let lwin = a.lwin.unwrap_or(DEFAULT_L_WIN);
    let bandpass = a.bandpass.unwrap_or(false);
    ctx.effective(&json!({ "input": input, "fs": a.fs, "lwin": lwin, "bandpass": bandpass }));
    let mut signal = ctx.phase("read", || io::read_signal(input, a.fs))?;
    if bandpass {
        signal = crate::signal::bandpass(&signal, crate::signal::HR_BAND_LO_HZ, crate::signal::HR_BAND_HI_HZ)?;
    }
    let map = ctx.phase("build_map", || build_ssp(&signal, lwin))?;
    let seq = autocorr_seq(&map);
    let hr = ctx.phase("invert", || invert_hr(&map))?;
    if let Some(p) = &a.out_map {
        io::write_ssp_csv(p, &map)?;
        ctx.wrote(p);
    }
    if let Some(p) = &a.out_seq {
        io::write_seq_csv(p, &seq)?;
        ctx.wrote(p);
    }
    if let Some(p) = &a.out_hr {
        io::write_json(p, &json!({ "hr_bpm": hr, "map_size": map.size(), "l_win": lwin }))?;
        ctx.wrote(p);
    }
    println!("hr_bpm={hr}");
    Ok(())
}

// ------------------------------------------------------------------ harmonize

fn harmonize_manifest(a: &HarmonizeArgs) -> Option<PathBuf> {
    [&a.out, &a.report, &a.out_queue].into_iter().flatten().next().map(|p| manifest_beside(p, "harmonize"))
}

fn cmd_harmonize(a: &HarmonizeArgs, ctx: &mut Ctx) -> Result<()> {
    let grads_path = required(&a.grads, "grads")?;
    let cfg = HarmonizerConfig {
        t_percent: a.t_percent.unwrap_or(crate::harmonizer::DEFAULT_T_PERCENT),
        queue_len: a.queue_len.unwrap_or(crate::harmonizer::DEFAULT_QUEUE_LEN),
        warmup: a.warmup.unwrap_or(crate::harmonizer::DEFAULT_WARMUP),
        seed: a.seed.unwrap_or(0),
        exclude_sifted_targets: a.exclude_sifted_targets.unwrap_or(false),
    };
    cfg.validate()?;
    let batch = ctx.phase("read", || io::read_grads(grads_path))?;
    let mut queue = match &a.queue {
        Some(p) => NormQueue::with_norms(cfg.queue_len, cfg.warmup, io::read_queue_csv(p)?),
        None => cfg.new_queue(),
    };
    let mode = a.mode.unwrap_or(Mode::FullDoha);
    let step = a.step.unwrap_or(0);
    ctx.effective(&json!({ "harmonizer": cfg, "mode": mode, "step": step }));
    let out = ctx.phase("harmonize", || harmonize_step_with(&batch, &mut queue, &cfg, step, mode))?;

    let row: Vec<String> = out.update.iter().map(f64::to_string).collect();
    println!("update={}", row.join(","));
    let zeroed: Vec<&str> =
        batch.ids.iter().zip(&out.kept).filter(|(_, k)| !**k).map(|(id, _)| id.as_str()).collect();
    if !zeroed.is_empty() {
        println!("zeroed={}", zeroed.join(","));
    }
    if let Some(p) = &a.out {
        io::write_text(p, &format!("{}\n", row.join(",")))?;
        ctx.wrote(p);
    }
    if let Some(p) = &a.out_queue {
        io::write_queue_csv(p, queue.iter())?;
        ctx.wrote(p);
    }
    if let Some(p) = &a.report {
        let events: Vec<Value> = out
            .events
            .iter()
            .map(|e| json!({ "i": e.i, "j": e.j, "cos_before": e.cos_before, "cos_after": e.cos_after }))
            .collect();
        let report = json!({
            "mode": mode,
            "update": out.update,
            "kept": out.kept,
            "zeroed_ids": zeroed,
            "threshold": out.threshold,
            "raw_norms": out.raw_norms,
            "projections": events,
            "sifted_deflections": out.sifted_deflections,
        });
        io::write_json(p, &report)?;
        ctx.wrote(p);
    }
    Ok(())
}

// ------------------------------------------------------------------ corpus

fn corpus_manifest(a: &CorpusArgs) -> Option<PathBuf> {
    a.out_dir.as_deref().map(|d| d.join("corpus.manifest.json"))
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => io::read_json(p),
        None => Ok(Scenario::reference()),
    }
}

fn cmd_corpus(a: &CorpusArgs, ctx: &mut Ctx) -> Result<()> {
    let out_dir = required(&a.out_dir, "out-dir")?;
    let mut scenario = load_scenario(a.scenario.as_deref())?;
    if let Some(n) = a.per_domain {
        scenario.train_per_domain = n;
    }
    if let Some(n) = a.eval_per_domain {
        scenario.eval_per_domain = n;
    }
    let seed = a.seed.unwrap_or(0);
    ctx.effective(&json!({ "scenario": scenario, "seed": seed }));
    let (train_c, eval_c) = ctx.phase("generate", || scenario.corpora(seed))?;
    ctx.phase("write", || {
        io::save_corpus(&out_dir.join("train"), &train_c)?;
        io::save_corpus(&out_dir.join("eval"), &eval_c)?;
        io::write_json(&out_dir.join("scenario.json"), &scenario)
    })?;
    for p in ["train", "eval", "scenario.json"] {
        ctx.wrote(&out_dir.join(p));
    }
    println!(
        "wrote {} training and {} evaluation items over {} domains to {}",
        train_c.items.len(),
        eval_c.items.len(),
        scenario.domains.len(),
        out_dir.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ train

fn train_manifest(a: &TrainArgs) -> Option<PathBuf> {
    let mode = a.mode.unwrap_or(Mode::FullDoha);
    a.out_dir.as_deref().map(|d| d.join(format!("train_{mode}.manifest.json")))
}

/// Training and evaluation corpora plus the scenario they came from.
fn open_corpus_dir(dir: &Path) -> Result<(Corpus, Option<Corpus>, Option<Scenario>)> {
    if !dir.is_dir() {
        return Err(DohaError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("corpus directory {} does not exist", dir.display()),
        )));
    }
    let scenario_path = dir.join("scenario.json");
    let scenario = scenario_path.is_file().then(|| io::read_json(&scenario_path)).transpose()?;
    if dir.join("train").join(io::CORPUS_INDEX).is_file() {
        let eval_dir = dir.join("eval");
        let eval = eval_dir.join(io::CORPUS_INDEX).is_file().then(|| io::load_corpus(&eval_dir)).transpose()?;
        Ok((io::load_corpus(&dir.join("train"))?, eval, scenario))
    } else {
        Ok((io::load_corpus(dir)?, None, scenario))
    }
}

fn domain_index(corpus: &Corpus, key: &str) -> Result<usize> {
    if let Some(i) = corpus.domains.iter().position(|d| d.name == key) {
        return Ok(i);
    }
    match key.parse::<usize>() {
        Ok(i) if i < corpus.domains.len() => Ok(i),
        _ => {
            let names: Vec<&str> = corpus.domains.iter().map(|d| d.name.as_str()).collect();
            param(format!("unknown domain {key:?}; corpus has {names:?}"))
        }
    }
}

fn cmd_train(a: &TrainArgs, ctx: &mut Ctx) -> Result<()> {
    let dir = required(&a.corpus_dir, "corpus-dir")?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let (train_c, eval_c, scenario) = ctx.phase("load", || open_corpus_dir(dir))?;
    if train_c.domains.len() < 2 {
        return param("leave-one-domain-out training needs at least two domains");
    }
    let held = match &a.holdout {
        Some(k) => domain_index(&train_c, k)?,
        None => train_c.domains.len() - 1,
    };
    let mode = a.mode.unwrap_or(Mode::FullDoha);
    let mut cfg = scenario.map(|s| s.train).unwrap_or_else(|| Scenario::reference().train);
    cfg.mode = mode;
    cfg.l_win = train_c.l_win;
    cfg.clip_len = train_c.items.first().map_or(cfg.clip_len, |it| it.clip.frames());
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);
    cfg.lr_max = a.lr_max.unwrap_or(cfg.lr_max);
    cfg.lr_min = a.lr_min.unwrap_or(cfg.lr_min);
    cfg.harmonizer.t_percent = a.t_percent.unwrap_or(cfg.harmonizer.t_percent);
    cfg.harmonizer.queue_len = a.queue_len.unwrap_or(cfg.harmonizer.queue_len);
    cfg.harmonizer.warmup = a.warmup.unwrap_or(cfg.harmonizer.warmup);
    ctx.effective(&json!({ "train": cfg, "holdout": train_c.domains[held].name }));

    let train_items: Vec<&CorpusItem> = train_c.items.iter().filter(|it| it.domain != held).collect();
    let holdout: Vec<&CorpusItem> = match &eval_c {
        Some(e) => e.domain_items(held).collect(),
        None => train_c.domain_items(held).collect(),
    };
    let outcome = ctx.phase("train", || train(&cfg, &train_items, &holdout))?;
    for m in &outcome.metrics {
        ctx.timings.push(PhaseTiming { phase: format!("epoch_{}", m.epoch), secs: m.wall_secs });
    }
    let metrics_path = out_dir.join(format!("metrics_{mode}.csv"));
    let model_path = out_dir.join(format!("model_{mode}.json"));
    ctx.phase("write", || {
        io::write_metrics_csv(&metrics_path, &outcome.metrics)?;
        io::write_json(&model_path, &outcome.model)
    })?;
    ctx.wrote(&metrics_path);
    ctx.wrote(&model_path);
    let last = outcome.metrics.last().and_then(|m| m.holdout);
    println!(
        "mode={mode} holdout={} final_train_loss={} holdout_mae={}",
        train_c.domains[held].name,
        outcome.metrics.last().map_or(f64::NAN, |m| m.train_loss),
        last.map_or_else(|| "NA".into(), |h| h.mae.to_string())
    );
    Ok(())
}

// ------------------------------------------------------------------ eval

fn eval_manifest(a: &EvalArgs) -> Option<PathBuf> {
    [&a.out, &a.out_metrics].into_iter().flatten().next().map(|p| manifest_beside(p, "eval"))
}

fn cmd_eval(a: &EvalArgs, ctx: &mut Ctx) -> Result<()> {
    let model_path = required(&a.model, "model")?;
    let model: ToyModel = io::read_json(model_path)?;
    let dir = required(&a.corpus_dir, "corpus-dir")?;
    ctx.effective(&json!({ "model": model_path, "corpus_dir": dir, "domain": a.domain }));
    let (train_c, eval_c, _) = ctx.phase("load", || open_corpus_dir(dir))?;
    let corpus = eval_c.unwrap_or(train_c);
    if model.channels != corpus.channels() {
        return param(format!("model expects {} channels, corpus has {}", model.channels, corpus.channels()));
    }
    let items: Vec<&CorpusItem> = match &a.domain {
        Some(k) => {
            let d = domain_index(&corpus, k)?;
            corpus.domain_items(d).collect()
        }
        None => corpus.items.iter().collect(),
    };
    let clips: Vec<&Clip> = items.iter().map(|it| &it.clip).collect();
    let truth: Vec<f64> = items.iter().map(|it| it.true_hr).collect();
    let pred = ctx.phase("predict", || predict_hr(&model, &clips, corpus.fs))?;
    let metrics = hr_metrics(&pred, &truth)?;
    if let Some(p) = &a.out {
        let mut counters = vec![0usize; corpus.domains.len()];
        let mut text = String::from("domain,item,true_hr,pred_hr\n");
        for (it, hr) in items.iter().zip(&pred) {
            let k = counters[it.domain];
            counters[it.domain] += 1;
            text.push_str(&format!("{},{k},{},{hr}\n", corpus.domains[it.domain].name, it.true_hr));
        }
        io::write_text(p, &text)?;
        ctx.wrote(p);
    }
    if let Some(p) = &a.out_metrics {
        io::write_json(p, &metrics)?;
        ctx.wrote(p);
    }
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

// ------------------------------------------------------------------ report

fn report_manifest(a: &ReportArgs) -> Option<PathBuf> {
    [&a.out_svg, &a.out_csv].into_iter().flatten().next().map(|p| manifest_beside(p, "report"))
}

fn cmd_report(a: &ReportArgs, ctx: &mut Ctx) -> Result<()> {
    let files = a.metrics.clone().unwrap_or_default();
    if files.is_empty() {
        return param("report needs at least one --metrics file");
    }
    if a.out_svg.is_none() && a.out_csv.is_none() {
        return param("report needs --out-svg and/or --out-csv");
    }
    let labels = a.labels.clone().unwrap_or_default();
    if !labels.is_empty() && labels.len() != files.len() {
        return param(format!("{} labels for {} metrics files", labels.len(), files.len()));
    }
    let column: Column = a.column.as_deref().unwrap_or("holdout_mae").parse()?;
    ctx.effective(&json!({ "metrics": files, "labels": labels, "column": column.name() }));
    let series = ctx.phase("read", || {
        files
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let rows = io::read_metrics_csv(f)?;
                let label = labels.get(k).cloned().unwrap_or_else(|| {
                    rows.first().map(|r| r.mode.to_string()).unwrap_or_else(|| {
                        f.file_stem().map_or_else(|| format!("series {k}"), |s| s.to_string_lossy().into_owned())
                    })
                });
                Ok(report::metrics_series(&label, &rows, column))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if let Some(p) = &a.out_csv {
        io::write_text(p, &report::series_csv(&series, "epoch", column.name()))?;
        ctx.wrote(p);
    }
    if let Some(p) = &a.out_svg {
        let title = a.title.clone().unwrap_or_else(|| format!("{} by epoch", column.name()));
        let svg = report::line_chart_svg(&title, "epoch", column.name(), &series)?;
        io::write_text(p, &svg)?;
        ctx.wrote(p);
    }
    Ok(())
}

// ------------------------------------------------------------------ delay sweep

fn sweep_manifest(a: &DelaySweepArgs) -> Option<PathBuf> {
    [&a.out_csv, &a.out_svg].into_iter().flatten().next().map(|p| manifest_beside(p, "delay-sweep"))
}

fn cmd_delay_sweep(a: &DelaySweepArgs, ctx: &mut Ctx) -> Result<()> {
    let out_csv = required(&a.out_csv, "out-csv")?;
    let spec = SynthSpec {
        harmonic_amps: a.harmonics.clone().unwrap_or_default(),
        seed: a.seed.unwrap_or(0),
        ..SynthSpec::clean(a.hr.unwrap_or(72.0), a.fs.unwrap_or(30.0), a.frames.unwrap_or(300))
    };
    spec.validate()?;
    let mode = match a.delay_mode.as_deref().unwrap_or("circular") {
        "circular" => DelayMode::Circular,
        "truncation" => DelayMode::Truncation,
        other => return param(format!("unknown delay mode {other:?} (circular or truncation)")),
    };
    let delays = match &a.delays {
        Some(d) => d.clone(),
        None => {
            let below_two_periods = (2.0 * spec.period_samples()).ceil() as usize - 1;
            (0..=below_two_periods.min(25)).collect()
        }
    };
    let lwin = a.lwin.unwrap_or(DEFAULT_L_WIN);
    ctx.effective(&json!({ "signal": spec, "delays": delays, "lwin": lwin, "mode": mode }));
    let rows = ctx.phase("sweep", || phase_invariance_report(&spec, &delays, lwin, mode))?;
    io::write_text(out_csv, &report::delay_sweep_csv(&rows))?;
    ctx.wrote(out_csv);
    if let Some(p) = &a.out_svg {
        let series = report::delay_sweep_series(&format!("{} bpm", spec.hr_bpm), &rows);
        let svg = report::line_chart_svg("interior map deviation by delay", "delay (samples)", "max |dR|", &[series])?;
        io::write_text(p, &svg)?;
        ctx.wrote(p);
    }
    let worst = rows.iter().map(|r| r.max_interior_dev).fold(0.0, f64::max);
    println!("delays={} max_interior_dev={worst}", rows.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_config_sections_over_top_level() {
        let flags = SynthArgs { hr: Some(80.0), ..Default::default() };
        let cfg = json!({ "hr": 60.0, "frames": 100, "fs": 25.0, "synth": { "fs": 20.0 }, "ssp": { "lwin": 9 } });
        let r = resolve("synth", &flags, Some(&cfg)).unwrap();
        assert_eq!(r.hr, Some(80.0));
        assert_eq!(r.frames, Some(100));
        assert_eq!(r.fs, Some(20.0));
    }

    #[test]
    fn config_keys_accept_flag_spelling() {
        let cfg = json!({ "out-map": "m.csv", "in": "s.json" });
        let r = resolve("ssp", &SspArgs::default(), Some(&cfg)).unwrap();
        assert_eq!(r.out_map, Some(PathBuf::from("m.csv")));
        assert_eq!(r.input, Some(PathBuf::from("s.json")));
        assert!(resolve("ssp", &SspArgs::default(), Some(&json!([1]))).is_err());
        assert!(resolve("ssp", &SspArgs::default(), Some(&json!({ "lwin": "x" }))).is_err());
    }
}
