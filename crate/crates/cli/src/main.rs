use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robens::experiment::{parse_config, run_experiment, Command, DatasetSpec, ExperimentConfig};
use robens::Error;

/// Train, attack and evaluate robust ensembles from flat config files.
#[derive(Parser)]
#[command(name = "robens", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Train models (natural, robust, ensemble, composite, composite_ensemble).
    Train(Paths),
    /// Evaluate a checkpoint at 0 and `eps_target`.
    Eval(Paths),
    /// Accuracy curve of a checkpoint over `eps_grid`.
    Curve(Paths),
    /// Smallest member radius whose ensemble matches a single robust model.
    AlphaSearch(Paths),
    /// Largest radius at which an ensemble matches a single model trained there.
    Equivalence(Paths),
}

#[derive(Args)]
struct Paths {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// Paths in the config are relative to the config file.
fn resolve(base: &Path, cfg: &mut ExperimentConfig) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    match &mut cfg.dataset {
        DatasetSpec::Cifar10 { path } => fix(path),
        DatasetSpec::Idx { images, labels } => {
            fix(images);
            fix(labels);
        }
        DatasetSpec::Gaussians { .. } => {}
    }
    if let Some(p) = cfg.checkpoint.as_mut() {
        fix(p);
    }
    if let Some(p) = cfg.output_dir.as_mut() {
        fix(p);
    }
}

fn run(command: Command, paths: Paths) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&paths.config)
        .map_err(|e| Failure::Input(format!("{}: {e}", paths.config.display())))?;
    let parsed = parse_config(&text)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let mut cfg = parsed.config;
    let base = paths.config.parent().unwrap_or(Path::new("."));
    resolve(base, &mut cfg);
    let out = paths
        .out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Failure::Input("no output directory: pass --out or set output_dir".into()))?;
    let summary = run_experiment(&cfg, command, &out)?;
    let best = &summary.runs[summary.best_run];
    println!(
        "wrote {} run(s) to {}; best run {} ({}) val_nat={:.4} val_adv={:.4}{}",
        summary.runs.len(),
        out.display(),
        summary.best_run,
        best.primary_model,
        best.val_natural_acc,
        best.val_adversarial_acc,
        if summary.best_run_meets_floor { "" } else { " (below adv_floor)" }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, paths) = match cli.command {
        Sub::Train(p) => (Command::Train, p),
        Sub::Eval(p) => (Command::Eval, p),
        Sub::Curve(p) => (Command::Curve, p),
        Sub::AlphaSearch(p) => (Command::AlphaSearch, p),
        Sub::Equivalence(p) => (Command::Equivalence, p),
    };
    match run(command, paths) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
