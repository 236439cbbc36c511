//! Command-line front end: `gen`, `train`, `eval` and `analyze`.
//!
//! Every command writes its outputs plus one line of `manifest.jsonl` in
//! its output directory. Exit codes: 0 success, 1 runtime failure, 2 usage
//! or configuration error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evalkit::{cross_scene_correlation, forgetting_analysis, render_map, MetricReport, NoiseTruth};
use crate::fusion::NetConfig;
use crate::synthdata::io::{read_corpus, write_corpus};
use crate::synthdata::{generate_corpus, FocalStackSample, GenConfig, NoiseMode};
use crate::trainer::{
    delta_sweep, predict_all, resume, train, write_sweep_csv, Checkpoint, TrainConfig, TrainError, TrainOptions,
    Variant, DELTA_GRID,
};

pub const MANIFEST: &str = "manifest.jsonl";
pub const RUN_INFO: &str = "run.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::ConfigMismatch { .. } | TrainError::Data(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "focalsal", version, about = "Saliency from noisy labels on synthetic focal stacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Train one variant on a corpus.
    Train(TrainArgs),
    /// Score a checkpoint against the clean masks of a corpus.
    Eval(EvalArgs),
    /// Post-hoc analyses of a training run.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator config (JSON); missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the number of scenes.
    #[arg(long)]
    pub count: Option<usize>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (JSON); missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation corpus, scored against its clean masks after each epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Confidence-weight decay.
    #[arg(long)]
    pub a: Option<f64>,
    /// Peer samples per anchor, the anchor included.
    #[arg(long)]
    pub ml: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Write a checkpoint every this many epochs (the final one is always written).
    #[arg(long, default_value_t = 5)]
    pub checkpoint_every: usize,
    /// Continue from a checkpoint directory. Flags override its stored
    /// config, which must then still match it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one PGM saliency map per sample.
    #[arg(long)]
    pub save_maps: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Forgetting,
    Correlation,
    DeltaSweep,
}

impl AnalysisKind {
    fn dir_name(self) -> &'static str {
        match self {
            AnalysisKind::Forgetting => "forgetting",
            AnalysisKind::Correlation => "correlation",
            AnalysisKind::DeltaSweep => "delta-sweep",
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Output directory of a `train` command.
    #[arg(long)]
    pub run: PathBuf,
    pub kind: AnalysisKind,
    /// Defaults to `<run>/analysis/<kind>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Margins for the sweep.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    /// Training seeds for the sweep; defaults to the run's seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub force: bool,
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    /// SHA-256 of the config file as read.
    pub config_file_hash: Option<String>,
    /// SHA-256 of the effective config as echoed below.
    pub config_hash: String,
    pub effective_config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub output_dir: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Where a training run found its data; written next to its log.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunInfo {
    pub corpus: PathBuf,
    pub val: Option<PathBuf>,
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let started = now();
    let m = match cli.command {
        Command::Gen(a) => cmd_gen(&a)?,
        Command::Train(a) => cmd_train(&a)?,
        Command::Eval(a) => cmd_eval(&a)?,
        Command::Analyze(a) => cmd_analyze(&a)?,
    };
    let manifest = RunManifest {
        args: argv,
        started_unix: started,
        finished_unix: now(),
        ..m
    };
    append_manifest(Path::new(&manifest.output_dir), &manifest)
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn append_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let line = serde_json::to_string(m).map_err(runtime)?;
    let path = dir.join(MANIFEST);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    writeln!(f, "{line}").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn manifest_for(command: &str, dir: &Path, config: &impl Serialize, file: Option<(&Path, String)>, seed: Option<u64>) -> Result<RunManifest> {
    let effective = serde_json::to_value(config).map_err(runtime)?;
    let compact = serde_json::to_vec(&effective).map_err(runtime)?;
    Ok(RunManifest {
        command: command.into(),
        args: Vec::new(),
        config_path: file.as_ref().map(|(p, _)| p.display().to_string()),
        config_file_hash: file.map(|(_, h)| h),
        config_hash: sha256_hex(&compact),
        effective_config: effective,
        seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        output_dir: dir.display().to_string(),
        started_unix: 0,
        finished_unix: 0,
    })
}

/// Read a JSON config; returns the value and the file's hash.
fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, String)> {
    let raw = fs::read(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let cfg = serde_json::from_slice(&raw).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    Ok((cfg, sha256_hex(&raw)))
}

/// Make `dir` ready for fresh outputs. A non-empty directory is refused
/// unless `force`, which clears everything but the manifest.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| runtime(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name() != MANIFEST)
            .collect();
        if !entries.is_empty() {
            if !force {
                return Err(CliError::Usage(format!(
                    "output directory {} is not empty; pass --force to replace it",
                    dir.display()
                )));
            }
            for e in entries {
                let p = e.path();
                let r = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
                r.map_err(|err| runtime(format!("{}: {err}", p.display())))?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(runtime)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), String>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(runtime)?;
    Ok(buf)
}

fn load_corpus(dir: &Path) -> Result<Vec<FocalStackSample>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("corpus {} is not a directory", dir.display())));
    }
    let samples = read_corpus(dir).map_err(runtime)?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("corpus {} contains no samples", dir.display())));
    }
    Ok(samples)
}

fn check_fit(net: &NetConfig, samples: &[FocalStackSample], what: &str) -> Result<()> {
    for s in samples {
        let (h, w) = s.resolution();
        if (s.k(), h, w, s.all_focus.channels) != (net.k, net.height, net.width, net.in_channels) {
            return Err(CliError::Usage(format!(
                "{what}: sample {} is {}x{}x{} with k={}, the network expects {}x{}x{} with k={}",
                s.id, s.all_focus.channels, h, w, s.k(), net.in_channels, net.height, net.width, net.k
            )));
        }
    }
    Ok(())
}

fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    if !dir.join("meta.json").is_file() {
        return Err(CliError::Usage(format!("{} is not a checkpoint directory", dir.display())));
    }
    Ok(Checkpoint::read(dir)?)
}

fn cmd_gen(a: &GenArgs) -> Result<RunManifest> {
    let (mut cfg, file) = match &a.config {
        Some(p) => {
            let (c, h) = load_config::<GenConfig>(p)?;
            (c, Some((p.as_path(), h)))
        }
        None => (GenConfig::default(), None),
    };
    if let Some(n) = a.count {
        cfg.count = n;
    }
    let samples = generate_corpus(&cfg, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    prepare_out(&a.out, a.force)?;
    write_corpus(&a.out, &samples).map_err(runtime)?;
    write_json(&a.out.join("gen_config.json"), &cfg)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    manifest_for("gen", &a.out, &cfg, file, Some(a.seed))
}

fn apply_overrides(cfg: &mut TrainConfig, a: &TrainArgs) {
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(v) = a.delta {
        cfg.forgetting.delta = v;
    }
    if let Some(v) = a.a {
        cfg.forgetting.a = v;
    }
    if let Some(v) = a.alpha {
        cfg.penalty.alpha = v;
    }
    if let Some(v) = a.ml {
        cfg.penalty.m_l = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
}

fn cmd_train(a: &TrainArgs) -> Result<RunManifest> {
    let ckpt = a.resume.as_deref().map(read_checkpoint).transpose()?;
    let (mut cfg, file) = match (&a.config, &ckpt) {
        (Some(p), _) => {
            let (c, h) = load_config::<TrainConfig>(p)?;
            (c, Some((p.as_path(), h)))
        }
        (None, Some(ck)) => (ck.meta.config.clone(), None),
        (None, None) => (TrainConfig::default(), None),
    };
    apply_overrides(&mut cfg, a);
    cfg.validate()?;

    let samples = load_corpus(&a.corpus)?;
    check_fit(&cfg.net, &samples, "training corpus")?;
    let val = a.val.as_deref().map(load_corpus).transpose()?.unwrap_or_default();
    check_fit(&cfg.net, &val, "validation corpus")?;
    let views: Vec<_> = samples.iter().map(|s| s.training_view()).collect();

    if ckpt.is_some() {
        fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    } else {
        prepare_out(&a.out, a.force)?;
    }
    write_json(&a.out.join("config.json"), &cfg)?;
    let info = RunInfo {
        corpus: fs::canonicalize(&a.corpus).map_err(runtime)?,
        val: a.val.as_deref().map(fs::canonicalize).transpose().map_err(runtime)?,
    };
    write_json(&a.out.join(RUN_INFO), &info)?;

    let opts = TrainOptions {
        checkpoint_dir: Some(a.out.join("checkpoints")),
        checkpoint_every: a.checkpoint_every,
        stop_after: None,
    };
    let out = match ckpt {
        Some(ck) => resume(&views, &val, &cfg, ck, &opts)?,
        None => train(&views, &val, &cfg, &opts)?,
    };
    let rec = &out.record;
    let csv = csv_bytes(|b| rec.write_csv(b).map_err(|e| e.to_string()))?;
    write_file(&a.out.join("record.csv"), &csv)?;
    write_json(&a.out.join("record.json"), rec)?;
    if !rec.forgetting_enabled {
        println!("variant {}: forgetting tracking disabled", rec.variant.name());
    }
    match (rec.final_f(), rec.final_mae()) {
        (Some(f), Some(m)) => println!("trained {} epochs; validation F {f:.4} MAE {m:.4}", rec.epochs.len()),
        _ => println!("trained {} epochs", rec.epochs.len()),
    }
    manifest_for("train", &a.out, &cfg, file, Some(cfg.seed))
}

fn cmd_eval(a: &EvalArgs) -> Result<RunManifest> {
    let ck = read_checkpoint(&a.ckpt)?;
    let cfg = &ck.meta.config;
    let net = cfg.effective_net();
    let samples = load_corpus(&a.corpus)?;
    check_fit(&net, &samples, "evaluation corpus")?;
    prepare_out(&a.out, a.force)?;
    let preds = predict_all(&ck.params, &net, &samples, cfg.batch_size)?;
    let report = MetricReport::compute(samples.iter().zip(&preds).map(|(s, p)| (s.id.as_str(), p.as_slice(), s.clean_mask())))
        .map_err(runtime)?;
    let csv = csv_bytes(|b| report.write_csv(b).map_err(|e| e.to_string()))?;
    write_file(&a.out.join("metrics.csv"), &csv)?;
    if a.save_maps {
        let dir = a.out.join("maps");
        fs::create_dir_all(&dir).map_err(runtime)?;
        for (s, p) in samples.iter().zip(&preds) {
            let (h, w) = s.resolution();
            render_map(p, h, w, &dir.join(format!("{}.pgm", s.id))).map_err(runtime)?;
        }
    }
    println!("{} samples: F {:.4} MAE {:.4}", report.len(), report.mean_f, report.mean_mae);
    manifest_for("eval", &a.out, cfg, None, Some(cfg.seed))
}

fn read_run(dir: &Path) -> Result<(TrainConfig, RunInfo)> {
    let (cfg, _) = load_config::<TrainConfig>(&dir.join("config.json"))?;
    let (info, _) = load_config::<RunInfo>(&dir.join(RUN_INFO))?;
    Ok((cfg, info))
}

fn refuse_heuristic(samples: &[FocalStackSample], what: &str) -> Result<()> {
    if samples.iter().any(|s| s.meta.noise.mode == NoiseMode::Heuristic) {
        return Err(CliError::Usage(format!(
            "{what} needs the corruption masks of a corruption-mode corpus; heuristic labels have no known noise mask"
        )));
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<RunManifest> {
    let (cfg, info) = read_run(&a.run)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("analysis").join(a.kind.dir_name()));
    match a.kind {
        AnalysisKind::Forgetting => {
            if !cfg.variant.pfm() {
                return Err(CliError::Usage(format!(
                    "run {} used variant {}, which logs no forgetting state",
                    a.run.display(),
                    cfg.variant.name()
                )));
            }
            let ck = Checkpoint::read(&a.run.join("checkpoints").join("final"))?;
            let state = ck
                .forgetting
                .ok_or_else(|| CliError::Usage("final checkpoint holds no forgetting state".into()))?;
            let samples = load_corpus(&info.corpus)?;
            refuse_heuristic(&samples, "forgetting analysis")?;
            let truth: Vec<NoiseTruth> = samples.iter().map(NoiseTruth::from_sample).collect();
            let rep = forgetting_analysis(&state, &truth).map_err(|e| CliError::Usage(e.to_string()))?;
            prepare_out(&out, a.force)?;
            write_file(&out.join("summary.csv"), &csv_bytes(|b| rep.write_summary_csv(b).map_err(|e| e.to_string()))?)?;
            write_file(&out.join("first_learn.csv"), &csv_bytes(|b| rep.write_first_learn_csv(b).map_err(|e| e.to_string()))?)?;
            write_file(&out.join("events.csv"), &csv_bytes(|b| rep.write_events_csv(b).map_err(|e| e.to_string()))?)?;
            match rep.separation() {
                Some(s) => println!("noisy/clean >3-event ratio {s:.3}"),
                None => println!("noisy/clean split not applicable"),
            }
        }
        AnalysisKind::Correlation => {
            let samples = load_corpus(&info.corpus)?;
            refuse_heuristic(&samples, "cross-scene correlation")?;
            let rep = cross_scene_correlation(&samples).map_err(|e| CliError::Usage(e.to_string()))?;
            prepare_out(&out, a.force)?;
            write_file(&out.join("correlation.csv"), &csv_bytes(|b| rep.write_csv(b).map_err(|e| e.to_string()))?)?;
            println!("{} scenes plotted, {} without noisy pixels omitted", rep.points.len(), rep.omitted);
        }
        AnalysisKind::DeltaSweep => {
            let val_dir = info
                .val
                .as_ref()
                .ok_or_else(|| CliError::Usage("the δ sweep needs a run trained with --val".into()))?;
            let samples = load_corpus(&info.corpus)?;
            let val = load_corpus(val_dir)?;
            check_fit(&cfg.net, &samples, "training corpus")?;
            check_fit(&cfg.net, &val, "validation corpus")?;
            let views: Vec<_> = samples.iter().map(|s| s.training_view()).collect();
            let deltas = a.deltas.clone().unwrap_or_else(|| DELTA_GRID.to_vec());
            let seeds = a.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
            prepare_out(&out, a.force)?;
            let mut logs = Vec::new();
            let rows = delta_sweep(&views, &val, &cfg, &deltas, &seeds, |d, s, rec| {
                log::info!("delta {d} seed {s}: F {:?}", rec.final_f());
                logs.push((d, s, rec.clone()));
                Ok(())
            })?;
            for (d, s, rec) in &logs {
                let csv = csv_bytes(|b| rec.write_csv(b).map_err(|e| e.to_string()))?;
                write_file(&out.join("runs").join(format!("delta_{d}_seed_{s}.csv")), &csv)?;
            }
            write_file(&out.join("delta_sweep.csv"), &csv_bytes(|b| write_sweep_csv(&rows, b).map_err(|e| e.to_string()))?)?;
            for r in &rows {
                println!("delta {:.1}: F {:.4} MAE {:.4}", r.delta, r.mean_f, r.mean_mae);
            }
        }
    }
    manifest_for("analyze", &out, &cfg, None, Some(cfg.seed))
}
