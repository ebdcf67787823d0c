//! Command implementations behind the `dada` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dada_core::checkpoint::Checkpoint;
use dada_core::config::RunConfig;
use dada_core::data::{load_csv, write_csv, synth_generate, FeatureDataset, SynthSpec};
use dada_core::eval::{dump_embeddings, evaluate_models, EvalReport, RetrievalIndex};
use dada_core::suite;
use dada_core::trainer::{train, Trainer};
use dada_core::DadaError;

/// Environment variable overriding `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "DADA_OUTPUT_DIR";

pub const PRESETS: &[(&str, &str)] = &[
    ("synth-default", include_str!("../presets/synth-default.toml")),
    ("cub-like", include_str!("../presets/cub-like.toml")),
    ("cars-like", include_str!("../presets/cars-like.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Parser)]
#[command(name = "dada", version, about = "Domain-adaptive proxy-based metric learning on feature vectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write metrics, checkpoints and the resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print metrics as one JSON object.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in config: synth-default, cub-like or cars-like.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override a config value, e.g. `--set hyper.eta=0.02` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Shorthand for `--set hyper.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for `--set output.dir=DIR`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate on every row of this CSV instead of the checkpoint's test split.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Override the checkpoint's data settings, e.g. `--set data.split_seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Also write the evaluated embeddings as CSV.
    #[arg(long)]
    pub dump_embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// `all` or one scope name.
    #[arg(long, default_value = "all")]
    pub scope: String,
    #[arg(long, default_value_t = suite::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = suite::DEFAULT_STEP)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().num_classes)]
    pub classes: usize,
    #[arg(long, default_value_t = SynthSpec::default().dim)]
    pub dim: usize,
    #[arg(long, default_value_t = SynthSpec::default().samples_per_class)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = SynthSpec::default().center_scale)]
    pub center_scale: f64,
    #[arg(long, default_value_t = SynthSpec::default().noise_sigma)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A failed command: exit code plus a one-line diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_VERIFICATION: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

impl From<DadaError> for Failure {
    fn from(e: DadaError) -> Self {
        let code = match e {
            DadaError::Config(_) | DadaError::Parse { .. } => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Config text, then the output-dir environment variable, then overrides.
pub fn resolve_config(args: &ConfigArgs, extra: &[String]) -> dada_core::Result<RunConfig> {
    let text = match (&args.config, &args.preset) {
        (Some(path), _) => fs::read_to_string(path)
            .map_err(|e| DadaError::config(format!("cannot read config {}: {e}", path.display())))?,
        (None, Some(name)) => preset(name)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                DadaError::config(format!("unknown preset '{name}'; expected one of {}", names.join(", ")))
            })?
            .to_string(),
        (None, None) => return Err(DadaError::config("pass --config PATH or --preset NAME")),
    };
    let mut overrides = Vec::new();
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        overrides.push(format!("output.dir={}", toml_string(&dir)));
    }
    overrides.extend(args.overrides.iter().cloned());
    overrides.extend(extra.iter().cloned());
    RunConfig::from_toml_str(&text, &overrides)
}

fn toml_string(s: &str) -> String {
    serde_json::to_string(s).expect("string encodes")
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    DadaError::io(path, e).into()
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let mut extra = Vec::new();
    if let Some(seed) = args.seed {
        extra.push(format!("hyper.seed={seed}"));
    }
    if let Some(dir) = &args.output {
        extra.push(format!("output.dir={}", toml_string(&dir.to_string_lossy())));
    }
    let cfg = resolve_config(&args.config, &extra)?;
    let (train_set, test_set) = cfg.data.load_split()?;
    let mut trainer = Trainer::new(cfg.hyper.clone(), &cfg.model, train_set.dim(), train_set.num_classes())?;

    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let snapshot = out.join("resolved-config.snapshot");
    fs::write(&snapshot, cfg.to_toml()).map_err(|e| io_err(&snapshot, e))?;
    let metrics_path = out.join("metrics.jsonl");
    let timings_path = out.join("timings.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?);
    let mut timings = BufWriter::new(File::create(&timings_path).map_err(|e| io_err(&timings_path, e))?);

    let every = cfg.output.checkpoint_every;
    train(&mut trainer, &train_set, &test_set, &cfg.eval, |record, t| {
        writeln!(metrics, "{}", record.to_json_line()).map_err(|e| DadaError::io(&metrics_path, e))?;
        metrics.flush().map_err(|e| DadaError::io(&metrics_path, e))?;
        let timing = serde_json::json!({ "epoch": record.epoch, "wallclock_s": record.wallclock_s });
        writeln!(timings, "{timing}").map_err(|e| DadaError::io(&timings_path, e))?;
        if every > 0 && record.epoch % every == 0 {
            Checkpoint::new(cfg.clone(), t.clone()).save(out.join(format!("epoch-{}.ckpt", record.epoch)))?;
        }
        Ok(())
    })?;
    timings.flush().map_err(|e| io_err(&timings_path, e))?;
    Checkpoint::new(cfg.clone(), trainer).save(out.join("final.ckpt"))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Evaluation used by `dada evaluate`, callable in-process.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    csv: Option<&Path>,
    overrides: &[String],
) -> dada_core::Result<(EvalReport, RetrievalIndex)> {
    let (train_set, test_set): (FeatureDataset, FeatureDataset) = match csv {
        Some(path) => {
            let ds = load_csv(path)?;
            (ds.clone(), ds)
        }
        None => {
            let cfg = ckpt.config.with_overrides(overrides)?;
            cfg.data.load_split()?
        }
    };
    let models = &ckpt.trainer.models;
    let expected = models.generator.input_dim();
    if test_set.dim() != expected {
        return Err(DadaError::config(format!(
            "dataset dimension {} does not match checkpoint input dimension {expected}",
            test_set.dim()
        )));
    }
    let report = evaluate_models(
        models,
        &train_set.features,
        &test_set,
        &ckpt.config.eval.ks,
        ckpt.trainer.probe_seed(),
    )?;
    let index = RetrievalIndex::new(models.generator.embed(&test_set.features)?, test_set.labels.clone())?;
    Ok((report, index))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (report, index) = evaluate_checkpoint(&ckpt, args.csv.as_deref(), &args.overrides)?;
    if let Some(path) = &args.dump_embeddings {
        dump_embeddings(&index, path)?;
    }
    println!("{}", serde_json::to_string(&report).expect("report encodes"));
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CmdResult {
    let results = suite::run(&args.scope, args.step, args.tol)?;
    let mut failed = Vec::new();
    for r in &results {
        let err = r.report.max_rel_error();
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{status:4} {:22} max_rel_err={err:.3e}  {}", r.scope, r.name);
        if !r.passed() {
            failed.push(format!("{} ({err:.3e})", r.scope));
        }
    }
    if failed.is_empty() {
        println!("{} checks passed at tol {:e}", results.len(), args.tol);
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFICATION,
            message: format!("gradient check failed at tol {:e}: {}", args.tol, failed.join(", ")),
        })
    }
}

pub fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        num_classes: args.classes,
        dim: args.dim,
        samples_per_class: args.samples_per_class,
        center_scale: args.center_scale,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    let ds = synth_generate(&spec)?;
    write_csv(&ds, &args.out).map_err(|e| Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    })?;
    Ok(())
}
