//! Command-line entry point. `run` returns the process exit status:
//! 0 on success, 1 on usage errors, 2 on data or model errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use graymod_core::checkpoint;
use graymod_core::gradcore::AdamConfig;
use graymod_core::metrics::{auc, evaluate};
use graymod_core::models::{check_variant_gradients, CheckConfig, CnnConfig, WordList};
use graymod_core::scorer::WORDLIST_FILE;
use graymod_core::service::ModerationService;
use graymod_core::textpipe::{gen_synthetic, read_dataset, write_dataset, Comment};
use graymod_core::trainer::{split_heldout, train, TargetMode, TrainConfig};
use graymod_core::tuner::{tune, tune_exhaustive, Thresholds, DEFAULT_BATCH_SIZE, DEFAULT_BETA};
use graymod_core::{Scorer, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const GRAD_TOLERANCE: f64 = 1e-3;
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const REPORT_FILE: &str = "train_report.json";

#[derive(Debug, Parser)]
#[command(name = "graymod", version, about = "Semi-automatic comment moderation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Score a labeled dataset and report AUC, Spearman and precisions.
    Eval(EvalArgs),
    /// Pick thresholds for a coverage on a development set.
    Tune(TuneArgs),
    /// Score comments and write one JSON line per comment.
    Score(ScoreArgs),
    /// Build a word-precision list.
    BuildList(BuildListArgs),
    /// Write a synthetic corpus with planted trigger words.
    GenSynth(GenSynthArgs),
    /// Run the moderation service over HTTP.
    Serve(ServeArgs),
    /// Compare analytic and finite-difference gradients.
    CheckGrad(CheckGradArgs),
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Binary,
    Probabilistic,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained vectors in word2vec text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Document-frequency cutoff for the list baseline.
    #[arg(long, default_value_t = 10)]
    pub min_df: usize,
    #[arg(long, default_value_t = 300)]
    pub dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 128)]
    pub att_hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub att_layers: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.02)]
    pub heldout_frac: f64,
    /// Minimum document frequency for vocabulary tokens.
    #[arg(long, default_value_t = 2)]
    pub min_freq: usize,
    /// CNN kernels per n-gram size.
    #[arg(long, default_value_t = 300)]
    pub kernels: usize,
    /// CNN n-gram sizes.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub ngrams: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value_t = Targets::Binary)]
    pub targets: Targets,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Development set for tuning thresholds before evaluation.
    #[arg(long, requires = "coverage")]
    pub dev: Option<PathBuf>,
    #[arg(long, requires = "dev")]
    pub coverage: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub coverage: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cross-check against the exhaustive pair sweep.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// JSONL output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildListArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub min_df: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.3)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding the journal; in-memory when absent.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Development set for coverage tuning.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Initial coverage when the store has no thresholds yet.
    #[arg(long, default_value_t = 0.8)]
    pub coverage: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CheckGradArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<graymod_core::Error> for Failure {
    fn from(e: graymod_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<i32, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {}", describe(&e));
            EXIT_DATA
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn echo_config<A: Serialize>(command: &str, seed: Option<u64>, args: &A) {
    let line = json!({ "command": command, "seed": seed, "config": args });
    eprintln!("{line}");
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Train(a) => {
            echo_config("train", Some(a.seed), &a);
            cmd_train(&a)
        }
        Command::Eval(a) => {
            echo_config("eval", None, &a);
            cmd_eval(&a)
        }
        Command::Tune(a) => {
            echo_config("tune", None, &a);
            cmd_tune(&a)
        }
        Command::Score(a) => {
            echo_config("score", None, &a);
            cmd_score(&a)
        }
        Command::BuildList(a) => {
            echo_config("build-list", None, &a);
            cmd_build_list(&a)
        }
        Command::GenSynth(a) => {
            echo_config("gen-synth", Some(a.seed), &a);
            cmd_gen_synth(&a)
        }
        Command::Serve(a) => {
            echo_config("serve", None, &a);
            cmd_serve(&a)
        }
        Command::CheckGrad(a) => {
            echo_config("check-grad", Some(a.seed), &a);
            cmd_check_grad(&a)
        }
    }
}

fn check_coverage(coverage: f64) -> Result<(), Failure> {
    if coverage > 0.0 && coverage <= 1.0 {
        Ok(())
    } else {
        Err(usage(format!(
            "--coverage must be in (0, 1], got {coverage}"
        )))
    }
}

fn check_beta_batch(beta: f64, batch_size: usize) -> Result<(), Failure> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(usage(format!("--beta must be positive, got {beta}")));
    }
    if batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    Ok(())
}

/// Pretty JSON to stdout, and to `out` when given.
fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        write_file(path, format!("{text}\n").as_bytes())?;
    }
    println!("{text}");
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_data(path: &Path) -> anyhow::Result<Vec<Comment>> {
    let data = read_dataset(path)?;
    if data.is_empty() {
        bail!("{} holds no comments", path.display());
    }
    Ok(data)
}

fn load_scorer(path: &Path) -> anyhow::Result<Scorer> {
    Scorer::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn cmd_train(a: &TrainArgs) -> Outcome {
    if a.variant == Variant::List {
        return train_list(a);
    }
    let config = TrainConfig {
        variant: a.variant,
        d: a.dim,
        m: a.hidden,
        r: a.att_hidden,
        l: a.att_layers,
        cnn: CnnConfig {
            ngram_sizes: a.ngrams.clone(),
            kernels_per_size: a.kernels,
            dropout_p: a.dropout,
        },
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        heldout_frac: a.heldout_frac,
        seed: a.seed,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        embeddings: a.embeddings.clone(),
        min_freq: a.min_freq,
        target: match a.targets {
            Targets::Binary => TargetMode::Binary,
            Targets::Probabilistic => TargetMode::Probabilistic,
        },
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_data(&a.data)?;
    let trained = train(&data, &config)?;
    checkpoint::save(&a.out, &trained.model, &trained.vocab, a.seed)?;
    emit_json(&trained.report, Some(&a.out.join(REPORT_FILE)))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ListReport {
    variant: Variant,
    seed: u64,
    min_df: usize,
    entries: usize,
    n_train: usize,
    n_heldout: usize,
    heldout_auc: Option<f64>,
}

fn train_list(a: &TrainArgs) -> Outcome {
    let data = load_data(&a.data)?;
    let (train_set, heldout) = split_heldout(&data, a.heldout_frac, a.seed)?;
    let list = WordList::build(&train_set, a.min_df)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    list.save(&a.out.join(WORDLIST_FILE))?;
    let entries = list.len();
    let scorer = Scorer::list(list);
    let report = ListReport {
        variant: Variant::List,
        seed: a.seed,
        min_df: a.min_df,
        entries,
        n_train: train_set.len(),
        n_heldout: heldout.len(),
        heldout_auc: auc(&scorer.score_set(&heldout)?).ok(),
    };
    emit_json(&report, Some(&a.out.join(REPORT_FILE)))?;
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> Outcome {
    check_beta_batch(a.beta, a.batch_size)?;
    if let Some(c) = a.coverage {
        check_coverage(c)?;
    }
    let scorer = load_scorer(&a.model)?;
    let data = load_data(&a.data)?;
    let thresholds = match (&a.dev, a.coverage) {
        (Some(dev), Some(coverage)) => {
            let dev_set = scorer.score_set(&load_data(dev)?)?;
            tune(&dev_set, coverage, a.beta, a.batch_size)?
        }
        _ => Thresholds::fixed(0.5),
    };
    let scored = scorer.score_set(&data)?;
    let report = evaluate(
        &scored,
        thresholds.t_a,
        thresholds.t_r,
        a.beta,
        a.batch_size,
    )?;
    let out = json!({
        "model": scorer.version(),
        "variant": scorer.variant(),
        "report": report,
        "auc": report.auc,
        "spearman": report.spearman,
    });
    emit_json(&out, a.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_tune(a: &TuneArgs) -> Outcome {
    check_coverage(a.coverage)?;
    check_beta_batch(a.beta, a.batch_size)?;
    let scorer = load_scorer(&a.model)?;
    let dev = load_data(&a.dev)?;
    let dev_set = scorer.score_set(&dev)?;
    let mut th = tune(&dev_set, a.coverage, a.beta, a.batch_size)?;
    // The newest development timestamp keeps the output reproducible.
    th.tuned_at = dev.iter().map(|c| c.ts).max().unwrap_or(0);
    if a.verify {
        let reference = tune_exhaustive(&dev_set, a.coverage, a.beta, a.batch_size)?;
        let same = (reference.t_a, reference.t_r, reference.dev_macro_f_beta)
            == (th.t_a, th.t_r, th.dev_macro_f_beta);
        if !same {
            eprintln!("verify: mismatch, exhaustive sweep gave {reference:?}");
            emit_json(&th, a.out.as_deref())?;
            return Ok(EXIT_DATA);
        }
        eprintln!("verify: ok, exhaustive sweep agrees");
    }
    emit_json(&th, a.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_score(a: &ScoreArgs) -> Outcome {
    let scorer = load_scorer(&a.model)?;
    let data = load_data(&a.data)?;
    let mut out = String::new();
    for c in &data {
        let pred = scorer.score_tokens(&c.tokens)?;
        let attention = pred.attention.map(|w| {
            c.tokens
                .iter()
                .zip(w)
                .map(|(t, weight)| json!({ "token": t, "weight": weight }))
                .collect::<Vec<_>>()
        });
        let mut line = json!({ "id": c.id, "p": pred.p });
        if let Some(att) = attention {
            line["attention"] = att.into();
        }
        out.push_str(&line.to_string());
        out.push('\n');
    }
    match &a.out {
        Some(path) => write_file(path, out.as_bytes())?,
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .context("writing stdout")?,
    }
    Ok(EXIT_OK)
}

fn cmd_build_list(a: &BuildListArgs) -> Outcome {
    let data = load_data(&a.data)?;
    let list = WordList::build(&data, a.min_df)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    list.save(&a.out)?;
    eprintln!("{} words listed", list.len());
    Ok(EXIT_OK)
}

fn cmd_gen_synth(a: &GenSynthArgs) -> Outcome {
    if !(0.0..=1.0).contains(&a.ratio) {
        return Err(usage(format!("--ratio must be in [0, 1], got {}", a.ratio)));
    }
    let data = gen_synthetic(a.n, a.ratio, a.seed).map_err(|e| usage(e.to_string()))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_dataset(&a.out, &data)?;
    Ok(EXIT_OK)
}

/// Builds the service `serve` would run, without binding a socket.
pub fn build_service(a: &ServeArgs) -> anyhow::Result<ModerationService> {
    let scorer = load_scorer(&a.model)?;
    let svc = match &a.store {
        Some(dir) => ModerationService::open(&dir.join(JOURNAL_FILE))?,
        None => ModerationService::in_memory(),
    };
    if let Some(dev) = &a.dev {
        let dev_set = scorer.score_set(&load_data(dev)?)?;
        svc.register_dev(dev_set, a.beta, a.batch_size)
            .map_err(|e| anyhow!(e))?;
    }
    svc.set_scorer(scorer);
    if svc.thresholds().is_none() {
        if svc.has_dev() {
            let update = svc.set_coverage(a.coverage).map_err(|e| anyhow!(e))?;
            eprintln!("thresholds: {}", serde_json::to_string(&update)?);
        } else {
            eprintln!(
                "warning: no thresholds yet; pass --dev so PUT /api/thresholds can tune them"
            );
        }
    }
    Ok(svc)
}

fn cmd_serve(a: &ServeArgs) -> Outcome {
    check_coverage(a.coverage)?;
    check_beta_batch(a.beta, a.batch_size)?;
    let svc = Arc::new(build_service(a)?);
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime
        .block_on(crate::server::serve(svc, SocketAddr::new(a.host, a.port)))
        .context("serving")?;
    Ok(EXIT_OK)
}

fn cmd_check_grad(a: &CheckGradArgs) -> Outcome {
    if a.variant == Variant::List {
        return Err(usage("the list baseline has no gradients"));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let cfg = CheckConfig::default();
    let mut worst = 0.0f64;
    for seed in a.seed..a.seed + a.seeds {
        let r = check_variant_gradients(a.variant, seed, &cfg)?;
        println!(
            "{} seed {seed}: max relative error {:.3e} over {} entries",
            a.variant, r.max_rel_error, r.entries_checked
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error {worst:.3e} (tolerance {GRAD_TOLERANCE:.0e})");
    Ok(if worst < GRAD_TOLERANCE {
        EXIT_OK
    } else {
        EXIT_DATA
    })
}
