use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use xmodal_core::ablation::{run_ablation, AblationReport};
use xmodal_core::checkpoint::{load_checkpoint, save_checkpoint};
use xmodal_core::config::RunConfig;
use xmodal_core::dataio::{read_bundle, split, synth_generate, write_bundle, EmbeddingBundle, Label};
use xmodal_core::metrics::{curve_csv, roc_points, MetricsReport};
use xmodal_core::profile::profile;
use xmodal_core::trainer::{score, train_with, TrainConfig};
use xmodal_core::Error;

#[derive(Parser)]
#[command(name = "xmodal", version, about = "Cross-modal deepfake detection on modality embeddings")]
struct Cli {
    /// Print the default configuration as JSON and exit.
    #[arg(long, global = true)]
    print_default_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding bundle.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a bundle, holding out a stratified evaluation split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a bundle with a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the contrastive × refiner × fusion grid over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Measure inference time, FLOPs and parameter memory of a checkpoint.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Param(_) | Error::Metric(_) => 2,
            Error::Io(_) | Error::Format(_) | Error::Checkpoint(_) => 3,
            Error::Training { .. } | Error::Domain(_) => 4,
            Error::Shape(_) | Error::Contract(_) => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| config_failure(format!("--{name} is required (or set paths.{} in the config)", name.replace('-', "_"))))
}

fn read_data(path: &Path) -> CliResult<EmbeddingBundle> {
    if !path.exists() {
        return Err(io_failure(path, std::io::ErrorKind::NotFound.into()));
    }
    let bundle = read_bundle(path).map_err(|e| match e {
        Error::Io(io) => io_failure(path, io),
        other => Failure::from(other),
    })?;
    for w in bundle.warnings() {
        log::warn!("{}: {w}", path.display());
    }
    Ok(bundle)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Hash of a model configuration, as carried by metrics reports.
fn train_config_hash(cfg: &TrainConfig) -> String {
    let text = serde_json::to_string(cfg).expect("serializable");
    format!("{:016x}", xmodal_core::checksum::crc64(text.as_bytes()))
}

fn with_timing(value: impl serde::Serialize, seconds: f64) -> Value {
    let mut v = serde_json::to_value(value).expect("serializable");
    v["timing"] = json!({ "wall_seconds": seconds });
    v
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn print_metrics(r: &MetricsReport) {
    println!("{:>8} {:>8} {:>8} {:>8} {:>8}", "EER", "AUC", "ACC", "n_real", "n_fake");
    println!(
        "{:>8.4} {:>8.4} {:>8.4} {:>8} {:>8}",
        r.eer, r.auc, r.acc, r.n_real, r.n_fake
    );
}

fn cmd_synth(common: Common, out: Option<PathBuf>) -> CliResult {
    let cfg = load_config(&common)?;
    let out = required(out, &cfg.paths.data, "out")?;
    let bundle = synth_generate(&cfg.synth)?;
    write_bundle(&bundle, &out).map_err(|e| match e {
        Error::Io(io) => io_failure(&out, io),
        other => other.into(),
    })?;
    let sidecar = json!({
        "provenance": bundle.provenance,
        "config_hash": cfg.config_hash(),
        "n_real": bundle.count(Label::Authentic),
        "n_fake": bundle.count(Label::Manipulated),
    });
    let mut side_path = out.clone().into_os_string();
    side_path.push(".provenance.json");
    write_file(Path::new(&side_path), to_json(&sidecar))?;
    if !common.quiet {
        println!(
            "wrote {} ({} authentic, {} manipulated)",
            out.display(),
            bundle.count(Label::Authentic),
            bundle.count(Label::Manipulated)
        );
        println!("provenance: {}", bundle.provenance);
    }
    Ok(())
}

fn cmd_train(common: Common, data: Option<PathBuf>, out_dir: Option<PathBuf>, epochs: Option<usize>) -> CliResult {
    let mut cfg = load_config(&common)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
        cfg.validate()?;
    }
    let data = required(data, &cfg.paths.data, "data")?;
    let out_dir = required(out_dir, &cfg.paths.out_dir, "out-dir")?;
    let bundle = read_data(&data)?;
    let (train_set, eval_set) = split(&bundle, cfg.eval_fraction, cfg.train.seed)?;
    let start = Instant::now();
    let quiet = common.quiet;
    let trained = train_with(&train_set, &eval_set, &cfg.train, |r| {
        if !quiet {
            let eval = r
                .eval
                .map(|m| format!("  eer {:.4}  auc {:.4}  acc {:.4}", m.eer, m.auc, m.acc))
                .unwrap_or_default();
            println!("epoch {:>3}  lr {:.0e}  loss {:.5}{eval}", r.epoch, r.lr, r.loss);
        }
    })?;
    let seconds = start.elapsed().as_secs_f64();

    fs::create_dir_all(&out_dir).map_err(|e| io_failure(&out_dir, e))?;
    let ckpt = out_dir.join("model.cckp");
    save_checkpoint(&trained, &ckpt).map_err(|e| match e {
        Error::Io(io) => io_failure(&ckpt, io),
        other => other.into(),
    })?;
    let history = json!({
        "config_hash": cfg.config_hash(),
        "epochs": trained.history,
    });
    write_file(&out_dir.join("history.json"), to_json(&history))?;

    let scores = score(&trained.model, &eval_set)?;
    let report = MetricsReport::compute(&scores, train_config_hash(&trained.config))?;
    write_file(&out_dir.join("report.json"), to_json(&with_timing(&report, seconds)))?;
    write_file(&out_dir.join("roc.csv"), curve_csv(&roc_points(&scores)?))?;
    if !quiet {
        print_metrics(&report);
        println!("checkpoint: {}", ckpt.display());
    }
    Ok(())
}

fn cmd_eval(common: Common, checkpoint: Option<PathBuf>, data: Option<PathBuf>, report: Option<PathBuf>) -> CliResult {
    let cfg = load_config(&common)?;
    let checkpoint = required(checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let data = required(data, &cfg.paths.data, "data")?;
    let report_path = required(report, &cfg.paths.report, "report")?;
    if !checkpoint.exists() {
        return Err(io_failure(&checkpoint, std::io::ErrorKind::NotFound.into()));
    }
    let trained = load_checkpoint(&checkpoint)?;
    let bundle = read_data(&data)?;
    if bundle.is_empty() {
        return Err(config_failure(format!("{} holds no samples to evaluate", data.display())));
    }
    trained.model.check_compatible(bundle.dims)?;
    let scores = score(&trained.model, &bundle)?;
    let report = MetricsReport::compute(&scores, train_config_hash(&trained.config))?;
    write_file(&report_path, to_json(&report))?;
    let points = roc_points(&scores)?;
    write_file(&sibling(&report_path, ".roc.csv"), curve_csv(&points))?;
    if !common.quiet {
        print_metrics(&report);
    }
    Ok(())
}

fn print_ablation(r: &AblationReport) {
    println!("{:<36} {:>16} {:>16} {:>16} {:>6}", "cell", "EER", "AUC", "ACC", "failed");
    let fmt = |s: Option<xmodal_core::ablation::MeanSd>| {
        s.map(|s| format!("{:.4}±{:.4}", s.mean, s.sd)).unwrap_or_else(|| "-".into())
    };
    for c in &r.cells {
        println!(
            "{:<36} {:>16} {:>16} {:>16} {:>6}",
            c.label,
            fmt(c.eer),
            fmt(c.auc),
            fmt(c.acc),
            c.failed
        );
    }
    for p in &r.panels {
        let verdict = match p.holds {
            Some(true) => "holds",
            Some(false) => "does not hold",
            None => "undetermined",
        };
        println!("panel {}: {} ({:?}): {verdict}", p.panel, p.description, p.metric);
    }
}

fn cmd_ablate(
    common: Common,
    data: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seeds: usize,
    epochs: Option<usize>,
) -> CliResult {
    let mut cfg = load_config(&common)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
        cfg.validate()?;
    }
    if seeds < 3 {
        return Err(config_failure(format!("--seeds must be at least 3, got {seeds}")));
    }
    let data = required(data, &cfg.paths.data, "data")?;
    let out_dir = required(out_dir, &cfg.paths.out_dir, "out-dir")?;
    let bundle = read_data(&data)?;
    let (train_set, eval_set) = split(&bundle, cfg.eval_fraction, cfg.train.seed)?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| cfg.train.seed + i).collect();
    let start = Instant::now();
    let quiet = common.quiet;
    let report = run_ablation(&train_set, &eval_set, &cfg.train, &seed_list, |cell, run| {
        if !quiet {
            match (&run.metrics, &run.error) {
                (Some(m), _) => println!("{}  seed {}  eer {:.4}  acc {:.4}", cell.label(), run.seed, m.eer, m.acc),
                (None, Some(e)) => println!("{}  seed {}  failed: {e}", cell.label(), run.seed),
                (None, None) => println!("{}  seed {}  no metrics", cell.label(), run.seed),
            }
        }
    })?;
    let seconds = start.elapsed().as_secs_f64();
    let mut doc = with_timing(&report, seconds);
    doc["config_hash"] = json!(cfg.config_hash());
    write_file(&out_dir.join("ablation.json"), to_json(&doc))?;
    if !quiet {
        print_ablation(&report);
    }
    Ok(())
}

fn cmd_profile(
    common: Common,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    repetitions: usize,
    report: Option<PathBuf>,
) -> CliResult {
    let cfg = load_config(&common)?;
    let checkpoint = required(checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let data = required(data, &cfg.paths.data, "data")?;
    if !checkpoint.exists() {
        return Err(io_failure(&checkpoint, std::io::ErrorKind::NotFound.into()));
    }
    let trained = load_checkpoint(&checkpoint)?;
    let bundle = read_data(&data)?;
    trained.model.check_compatible(bundle.dims)?;
    let p = profile(&trained.model, &bundle, repetitions)?;
    let doc = json!({
        "flop_count": p.flop_count,
        "flops_per_sample": p.flop_count as f64 / p.samples as f64,
        "peak_param_bytes": p.peak_param_bytes,
        "param_count": p.param_count,
        "samples": p.samples,
        "repetitions": p.repetitions,
        "timing": {
            "inference_ms_per_sample": p.inference_ms_per_sample,
            "timings_ms": p.timings_ms,
        },
    });
    if let Some(path) = report.or(cfg.paths.report) {
        write_file(&path, to_json(&doc))?;
    }
    if !common.quiet {
        println!("inference   {:.4} ms/sample (median of {})", p.inference_ms_per_sample, p.repetitions);
        println!("flops       {} total, {:.0} per sample", p.flop_count, p.flop_count as f64 / p.samples as f64);
        println!("parameters  {} ({} bytes)", p.param_count, p.peak_param_bytes);
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if cli.print_default_config {
        print!("{}", to_json(&RunConfig::default()));
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(config_failure("no command given; see --help"));
    };
    match command {
        Command::Synth { common, out } => cmd_synth(common, out),
        Command::Train {
            common,
            data,
            out_dir,
            epochs,
        } => cmd_train(common, data, out_dir, epochs),
        Command::Eval {
            common,
            checkpoint,
            data,
            report,
        } => cmd_eval(common, checkpoint, data, report),
        Command::Ablate {
            common,
            data,
            out_dir,
            seeds,
            epochs,
        } => cmd_ablate(common, data, out_dir, seeds, epochs),
        Command::Profile {
            common,
            checkpoint,
            data,
            repetitions,
            report,
        } => cmd_profile(common, checkpoint, data, repetitions, report),
    }
}

fn quiet_flag(cli: &Cli) -> bool {
    match &cli.command {
        Some(
            Command::Synth { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common, .. }
            | Command::Profile { common, .. },
        ) => common.quiet,
        None => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if quiet_flag(&cli) { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
