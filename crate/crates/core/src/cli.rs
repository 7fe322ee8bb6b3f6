//! Command-line surface: `synth`, `train`, `eval`, `predict`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. A `--config FILE`
//! of `key=value` lines supplies flag defaults; explicit flags win.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, load_jsonl, SyntheticConfig};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::fusion::Variant;
use crate::nn::Activation;
use crate::train::{grad_check, layer_checks, GradCheckReport, OptimizerKind, TrainConfig};
use crate::workflow::{self, append_ext, Predictor, TrainJob};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fusenet", version, about = "Attention fusion network for inquiry classification")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset, its manifest and word vectors.
    Synth(SynthArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Evaluate a model, or compare saved reports.
    Eval(EvalArgs),
    /// Top-k classes for a single inquiry.
    Predict(PredictArgs),
    /// Finite-difference gradient checks for every layer and variant.
    Gradcheck(GradcheckArgs),
}

fn parse_noise(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("noise must be in [0, 1), got {v}"))
    }
}

fn parse_nonneg(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite value >= 0, got {v}"))
    }
}

fn parse_rate(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("expected a rate in [0, 1), got {v}"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive value, got {v}"))
    }
}

fn parse_split(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("{p:?} is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] if *a > 0.0 && *b > 0.0 && *c > 0.0 && ((a + b + c) - 1.0).abs() < 1e-9 => Ok([*a, *b, *c]),
        _ => Err(format!("split must be three positive fractions summing to 1, got {s:?}")),
    }
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    Activation::from_name(s).ok_or_else(|| format!("unknown activation {s:?}"))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output JSON-lines dataset.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1300, value_parser = clap::value_parser!(u64).range(130..))]
    pub n: u64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_noise)]
    pub noise: f64,
    #[arg(long, default_value_t = 5)]
    pub seed: u64,
    /// Manifest path [default: OUT with `.manifest.json` appended].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Word-vector file [default: OUT with `.vec` appended].
    #[arg(long)]
    pub vec_out: Option<PathBuf>,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub embed_dim: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub num_features: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub variant: Variant,
    /// Word vectors in `.vec` text format.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Model checkpoint; the sidecar, report and test split are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_nonneg)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "adam")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.0, value_parser = parse_rate)]
    pub dropout: f64,
    /// Early-stopping patience in epochs; 0 disables.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_seq_len: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub lstm_hidden: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub mlp_hidden: u64,
    #[arg(long, default_value = "relu", value_parser = parse_activation)]
    pub activation: Activation,
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_split)]
    pub split: [f64; 3],
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Read at most this many vectors; 0 reads all.
    #[arg(long, default_value_t = 0)]
    pub vocab_limit: usize,
    #[arg(long, default_value_t = 5.0, value_parser = parse_positive)]
    pub clip_norm: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "compare")]
    pub model: Option<PathBuf>,
    #[arg(long, required_unless_present = "compare")]
    pub data: Option<PathBuf>,
    /// Overrides the embeddings path recorded at training time.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Report JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compare saved report files instead of evaluating.
    #[arg(long, num_args = 1.., conflicts_with_all = ["model", "data"])]
    pub compare: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub text: String,
    /// JSON object with `numerical` (array) and `categorical` (array of pairs).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reads `key=value` lines (`#` comments, blank lines allowed) into
/// `--key=value` arguments.
pub fn config_args(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        let key = k.trim().replace('_', "-");
        out.push(OsString::from(format!("--{key}={}", v.trim())));
    }
    Ok(out)
}

/// Splices config-file flags in right after the subcommand name so explicit
/// flags that follow override them.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            config = Some(it.next().ok_or("--config needs a path")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(OsString::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(config) = config else {
        return Ok(rest);
    };
    let extra = config_args(Path::new(&config)).map_err(|e| e.to_string())?;
    let pos = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    let mut out = rest[..pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&rest[pos..]);
    Ok(out)
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Output goes to `out`, diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn run() -> i32 {
    if let Ok(n) = std::env::var("FUSENET_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: FUSENET_THREADS must be a positive integer, got {n:?}");
                return EXIT_USAGE;
            }
        }
    }
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train_cmd(a, out, err),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = SyntheticConfig {
        n: a.n as usize,
        noise: a.noise,
        seed: a.seed,
        num_features: a.num_features as usize,
        embed_dim: a.embed_dim as usize,
        ..SyntheticConfig::default()
    };
    let ds = data::generate_synthetic(&cfg)?;
    let manifest = a.manifest.unwrap_or_else(|| append_ext(&a.out, ".manifest.json"));
    let vectors = a.vec_out.unwrap_or_else(|| append_ext(&a.out, ".vec"));
    ds.write(&a.out, &manifest, Some(&vectors))?;
    let c = &ds.manifest.ceilings;
    writeln!(out, "wrote {} examples to {}", ds.examples.len(), a.out.display()).map_err(io_out)?;
    writeln!(out, "manifest {}", manifest.display()).map_err(io_out)?;
    writeln!(out, "vectors {} ({} words, dim {})", vectors.display(), ds.embeddings.len(), ds.embeddings.dim())
        .map_err(io_out)?;
    writeln!(out, "ceiling\ttop1\ttop3").map_err(io_out)?;
    for (name, v) in [("text-only", c.text), ("signal-only", c.signal), ("joint", c.joint)] {
        writeln!(out, "{name}\t{:.4}\t{:.4}", v.top1, v.top3).map_err(io_out)?;
    }
    Ok(EXIT_OK)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let examples = load_jsonl(&a.data)?;
    let table = EmbeddingTable::load_vec_file(&a.embeddings, workflow::vocab_limit(a.vocab_limit))?;
    let job = TrainJob {
        variant: a.variant,
        embeddings: a.embeddings.clone(),
        vocab_limit: a.vocab_limit,
        max_seq_len: a.max_seq_len as usize,
        lstm_hidden: a.lstm_hidden as usize,
        mlp_hidden: a.mlp_hidden as usize,
        activation: a.activation,
        split: a.split,
        split_seed: a.split_seed,
        train: TrainConfig {
            epochs: a.epochs as usize,
            batch_size: a.batch_size as usize,
            learning_rate: a.lr,
            optimizer: a.optimizer,
            dropout_rate: a.dropout,
            early_stop_patience: a.patience,
            clip_norm: a.clip_norm,
            seed: a.seed,
            ..TrainConfig::default()
        },
    };
    if a.lr == 0.0 {
        let _ = writeln!(err, "warning: learning rate is 0; parameters will not change");
    }
    let run = workflow::run_training(&examples, &table, &job)?;
    let paths = workflow::save_run(&run, &job, &a.out)?;
    let report = &run.report;

    writeln!(
        out,
        "variant {} trained {} epochs on {} examples",
        a.variant,
        report.epochs.len(),
        run.prepared.train.len()
    )
    .map_err(io_out)?;
    writeln!(
        out,
        "best validation top-{} accuracy {:.4} (epoch {})",
        report.k, report.best_val_topk, report.best_epoch
    )
    .map_err(io_out)?;
    writeln!(out, "model {}", paths.model.display()).map_err(io_out)?;
    writeln!(out, "report {}", paths.report.display()).map_err(io_out)?;
    writeln!(out, "test split {}", paths.test_split.display()).map_err(io_out)?;
    Ok(EXIT_OK)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    if !a.compare.is_empty() {
        let reports = a.compare.iter().map(EvalReport::load).collect::<Result<Vec<_>>>()?;
        write!(out, "{}", eval::compare(&reports)?).map_err(io_out)?;
        return Ok(EXIT_OK);
    }
    let (Some(model), Some(data_path)) = (a.model, a.data) else {
        return Err(Error::Argument("--model and --data are required".into()));
    };
    let predictor = Predictor::load(&model, a.embeddings.as_deref())?;
    let examples = load_jsonl(&data_path)?;
    let encoded = predictor.encode(&examples)?;
    let report = eval::report(&predictor.model, &encoded, a.k as usize)?;
    report.check_identity()?;
    write!(out, "{}", report.table()).map_err(io_out)?;
    if let Some(p) = a.out {
        report.save(&p)?;
        writeln!(out, "report {}", p.display()).map_err(io_out)?;
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureFile {
    numerical: Vec<f64>,
    categorical: Vec<(String, String)>,
}

#[derive(Serialize)]
struct PredictionOut<'a> {
    classes: &'a [(String, f64)],
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let predictor = Predictor::load(&a.model, a.embeddings.as_deref())?;
    let (num, cat) = match (&a.features, predictor.model.variant().uses_tabular()) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let f: FeatureFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.display().to_string(),
                line: e.line(),
                msg: e.to_string(),
            })?;
            (f.numerical, f.categorical)
        }
        (None, true) => {
            return Err(Error::Argument(format!(
                "variant {} needs --features",
                predictor.model.variant()
            )))
        }
        (None, false) => (vec![], vec![]),
    };
    let top = predictor.predict(&a.text, &num, &cat, a.k as usize)?;
    for (name, p) in &top {
        writeln!(out, "{name}\t{p:.6}").map_err(io_out)?;
    }
    if let Some(p) = a.out {
        let json = serde_json::to_string_pretty(&PredictionOut { classes: &top })?;
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let mut reports: Vec<GradCheckReport> = Vec::new();
    for seed in 1..=a.seeds {
        reports.extend(layer_checks(seed)?);
        for v in Variant::ALL {
            reports.push(grad_check(v, seed)?);
        }
    }
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passes(a.tolerance) { "ok" } else { "FAIL" };
        writeln!(out, "{status:<4} {:<24} seed {:<3} max rel err {:.3e}", r.name, r.seed, r.max_rel_err()).map_err(io_out)?;
        for b in &r.blocks {
            writeln!(out, "       {:<40} {:.3e}", b.name, b.max_rel_err).map_err(io_out)?;
            if !(b.max_rel_err < a.tolerance) {
                failed.push(format!("{} seed {}: {} ({:.3e})", r.name, r.seed, b.name, b.max_rel_err));
            }
        }
    }
    let mut worst: Vec<(String, f64)> = Vec::new();
    for r in &reports {
        match worst.iter_mut().find(|(n, _)| *n == r.name) {
            Some(w) => w.1 = w.1.max(r.max_rel_err()),
            None => worst.push((r.name.clone(), r.max_rel_err())),
        }
    }
    for (name, e) in &worst {
        writeln!(out, "max rel err {name:<24} {e:.3e}").map_err(io_out)?;
    }
    if let Some(p) = a.out {
        let json = serde_json::to_string_pretty(&reports)?;
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    }
    if failed.is_empty() {
        writeln!(out, "gradcheck passed at tolerance {:e}", a.tolerance).map_err(io_out)?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "gradcheck FAILED at tolerance {:e}; offending blocks:", a.tolerance).map_err(io_out)?;
        for f in &failed {
            writeln!(out, "  {f}").map_err(io_out)?;
        }
        Ok(EXIT_FAILURE)
    }
}
