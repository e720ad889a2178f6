//! `uflst` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uflst::checkpoint::{load_checkpoint, Checkpoint};
use uflst::clustering::write_pseudo_labels;
use uflst::config::TrainConfig;
use uflst::data::{
    generate_synthetic, load_labels, load_matrix_dataset, write_labels, write_raw64, Dataset,
    DsvOptions, MatrixFormat, Split, SyntheticSpec,
};
use uflst::eval::{cluster_stats, few_shot_accuracy, RoundMetrics};
use uflst::gradcheck::gradient_suite;
use uflst::pipeline::{run_clustering_phase, GroundTruth, Trainer};
use uflst::run_dir::{RunDir, RunMeta};

#[derive(Parser)]
#[command(name = "uflst", version, about = "Unsupervised few-shot learning by self-supervised training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Alternate clustering and episodic training for the configured rounds.
    Train(TrainArgs),
    /// Cluster a dataset with a trained encoder and dump pseudo-labels.
    Cluster(ClusterArgs),
    /// Few-shot accuracy of a checkpoint on a labeled test set.
    Eval(EvalArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset as raw64 matrices plus label files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `dbscan.ms=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct DataArgs {
    /// Feature matrix (raw64, csv/tsv/dsv, or IDX).
    #[arg(long)]
    data: PathBuf,
    /// Ground-truth labels for the data, used only for NMI reporting.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Args)]
struct FormatArgs {
    /// raw64, dsv or idx; guessed from the file name when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Field delimiter for text input; any of , ; tab space when omitted.
    #[arg(long)]
    delimiter: Option<char>,
    /// Text input carries an integer label in its last column.
    #[arg(long)]
    label_column: bool,
}

#[derive(Args)]
struct TestArgs {
    /// Held-out feature matrix for per-round few-shot accuracy.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    test: TestArgs,
    /// Output directory for config, metrics, checkpoints and pseudo-labels.
    #[arg(long)]
    run_dir: PathBuf,
    /// Continue from the latest checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
    /// Suppress per-round output.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pseudo-label CSV destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Test labels; optional when the test file has a label column.
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving train.raw64, train_labels.txt, test.raw64, test_labels.txt.
    #[arg(long)]
    out: PathBuf,
    /// Start from the benchmark fixture instead of plain blobs.
    #[arg(long)]
    benchmark: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// SyntheticSpec field override, e.g. `num_classes=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Failure categories mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(uflst::Error),
}

impl From<uflst::Error> for Failure {
    fn from(e: uflst::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into().trim_end().to_string())
}

fn load_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let base = match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("config file not found: {}", path.display())));
            }
            let text = std::fs::read_to_string(path).map_err(uflst::Error::from)?;
            TrainConfig::from_toml_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    base.with_overrides(&args.overrides).map_err(|e| usage(e.to_string()))
}

fn resolve_format(path: &Path, explicit: &Option<String>) -> CliResult<MatrixFormat> {
    match explicit {
        Some(f) => MatrixFormat::parse(f).ok_or_else(|| usage(format!("unknown format {f:?}"))),
        None => MatrixFormat::from_path(path).ok_or_else(|| {
            usage(format!("cannot infer format of {}; pass --format", path.display()))
        }),
    }
}

fn load_dataset(
    path: &Path,
    labels: Option<&Path>,
    format: &FormatArgs,
    split: Split,
) -> CliResult<Dataset> {
    if !path.is_file() {
        return Err(usage(format!("data file not found: {}", path.display())));
    }
    let fmt = resolve_format(path, &format.format)?;
    let opts = DsvOptions {
        delimiter: format.delimiter,
        label_column: format.label_column,
    };
    let mut ds = load_matrix_dataset(path, fmt, opts, split)?;
    if let Some(l) = labels {
        ds = ds.with_labels(load_labels(l)?)?;
    }
    Ok(ds)
}

fn print_round(m: &RoundMetrics) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "round {:>3}  eps {:.4}  fallback {:<12} clusters {:>4}  outliers {:>5}  nmi {}  way {:>3}  episodes {:>5}  loss {}  acc {}",
        m.round,
        m.epsilon,
        m.fallback.label(),
        m.num_clusters,
        m.num_outliers,
        opt(m.nmi),
        m.way,
        m.episodes,
        opt(m.mean_loss),
        opt(m.accuracy_mean),
    );
}

fn latest_checkpoint(run: &RunDir) -> CliResult<Checkpoint> {
    let dir = run.root().join("checkpoints");
    let mut best: Option<(usize, PathBuf)> = None;
    let entries = std::fs::read_dir(&dir).map_err(uflst::Error::from)?;
    for entry in entries {
        let path = entry.map_err(uflst::Error::from)?.path();
        let round = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("round_")?.strip_suffix(".ckpt")?.parse().ok());
        if let Some(r) = round {
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, path));
            }
        }
    }
    let (_, path) = best.ok_or_else(|| usage(format!("no checkpoints in {}", dir.display())))?;
    Ok(load_checkpoint(&path)?)
}

fn train(args: TrainArgs, threads: Option<usize>) -> CliResult {
    let fresh_config = if args.resume { None } else { Some(load_config(&args.config)?) };
    let data = load_dataset(&args.data.data, args.data.labels.as_deref(), &args.data.format, Split::Train)?;
    let test = match (&args.test.test, &args.test.test_labels) {
        (Some(t), labels) => {
            let ds = load_dataset(t, labels.as_deref(), &args.data.format, Split::Test)?;
            if ds.labels().is_none() {
                return Err(usage("--test needs --test-labels or a label column"));
            }
            Some(ds)
        }
        (None, Some(_)) => return Err(usage("--test-labels given without --test")),
        (None, None) => None,
    };

    let (mut trainer, mut run) = if args.resume {
        if args.config.config.is_some() || !args.config.overrides.is_empty() {
            return Err(usage("--resume uses the run directory's config; drop --config/--set"));
        }
        let saved = args.run_dir.join("config.toml");
        if !saved.is_file() {
            return Err(usage(format!("config file not found: {}", saved.display())));
        }
        let cfg = TrainConfig::from_toml_str(&std::fs::read_to_string(&saved).map_err(uflst::Error::from)?)?;
        let run = RunDir::open(&args.run_dir)?;
        let state = latest_checkpoint(&run)?;
        (Trainer::resume(cfg, state)?, run)
    } else {
        let cfg = fresh_config.expect("loaded above");
        let run = RunDir::create(&args.run_dir, &cfg, &RunMeta::new(&cfg, threads))?;
        (Trainer::new(cfg, data.dim())?, run)
    };
    run.echo = !args.quiet;

    let mut observer = GroundTruth {
        train_labels: data.labels(),
        test: test.as_ref().map(|t| (t.features(), t.labels().expect("checked"))),
        protocol: trainer.config.eval.clone(),
    };
    let unlabeled = data.unlabeled();
    while !trainer.finished() {
        let m = trainer.run_round(unlabeled, &mut observer, &mut run)?;
        if !args.quiet {
            print_round(&m);
        }
    }
    run.write_final(&trainer.state)?;
    if !args.quiet {
        println!("final model: {}", run.final_model_path().display());
    }
    Ok(())
}

fn cluster(args: ClusterArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = load_dataset(&args.data.data, args.data.labels.as_deref(), &args.data.format, Split::Train)?;
    let out = run_clustering_phase(&ckpt.params, data.unlabeled(), &cfg)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    write_pseudo_labels(&args.out, data.len(), out.pl.as_ref(), ckpt.round)?;
    let clusters = out.pl.as_ref().map_or(0, |p| p.num_clusters);
    let outliers = out.pl.as_ref().map_or(data.len(), |p| p.outlier_indices.len());
    println!(
        "epsilon {:.6}  ms {}  fallback {}  clusters {clusters}  outliers {outliers}",
        out.epsilon,
        out.ms,
        out.fallback.label()
    );
    if let Some(truth) = data.labels() {
        if let Some(nmi) = cluster_stats(out.pl.as_ref(), truth)?.nmi {
            println!("nmi {nmi:.6}");
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let test = load_dataset(&args.test, args.test_labels.as_deref(), &args.format, Split::Test)?;
    let labels = test
        .labels()
        .ok_or_else(|| usage("eval needs --test-labels or a label column"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let acc = few_shot_accuracy(&ckpt.params, test.features(), labels, &cfg.eval, &mut rng)?;
    let half_width = 1.96 * acc.std / (acc.episodes as f64).sqrt();
    println!(
        "accuracy {:.4} ± {:.4} ({}-way {}-shot, {} episodes)",
        acc.mean, half_width, cfg.eval.way, cfg.eval.shot, acc.episodes
    );
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> CliResult {
    let results = gradient_suite(args.trials, args.seed)?;
    let mut ok = true;
    for r in &results {
        let pass = r.max_rel_error < args.tolerance;
        ok &= pass;
        println!(
            "{:<20} max_rel_error {:.3e}  trials {}  {}",
            r.name,
            r.max_rel_error,
            r.trials,
            if pass { "ok" } else { "FAIL" }
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime(uflst::Error::InfeasibleCheck(format!(
            "relative error above {}",
            args.tolerance
        ))))
    }
}

fn synth(args: SynthArgs) -> CliResult {
    let mut spec = if args.benchmark {
        SyntheticSpec::benchmark(0)
    } else {
        SyntheticSpec::default()
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if !args.overrides.is_empty() {
        let mut table = toml::Table::try_from(&spec).expect("spec serializes");
        for o in &args.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(format!("override {o:?} is not key=value")))?;
            let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", v.trim()))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .ok_or_else(|| usage(format!("bad value in {o:?}")))?;
            table.insert(k.trim().to_string(), value);
        }
        spec = table.try_into().map_err(|e: toml::de::Error| usage(e.to_string()))?;
    }
    let (train, test) = generate_synthetic(&spec)?;
    std::fs::create_dir_all(&args.out).map_err(uflst::Error::from)?;
    for (name, ds) in [("train", &train), ("test", &test)] {
        write_raw64(&args.out.join(format!("{name}.raw64")), ds.features())?;
        write_labels(&args.out.join(format!("{name}_labels.txt")), ds.labels().expect("synthetic labels"))?;
    }
    println!(
        "wrote {} train and {} test rows of dim {} to {}",
        train.len(),
        test.len(),
        spec.dim,
        args.out.display()
    );
    Ok(())
}

/// UFLST_THREADS sets the worker pool size.
fn configure_threads() -> CliResult<Option<usize>> {
    let Ok(raw) = std::env::var("UFLST_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("UFLST_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("cannot size thread pool: {e}")))?;
    Ok(Some(n))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|threads| match cli.command {
        Command::Train(a) => train(a, threads),
        Command::Cluster(a) => cluster(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `uflst --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", e.to_string().trim_end());
            ExitCode::from(1)
        }
    }
}
