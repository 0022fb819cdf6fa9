use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hiercause::harness::{self, ExperimentConfig, HarnessError, Mode, Target};
use serde_json::json;

/// Latent hierarchy discovery and its evaluation experiments.
///
/// Settings come from `--config` (JSON) when given; command-line flags
/// override the file. Results and a `manifest.json` are written to `--out`.
#[derive(Parser, Debug)]
#[command(name = "hiercause", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named hyperparameter preset.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Comma-separated seeds, one run per seed.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Prediction threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Independence threshold.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Reference graph name or graph spec file.
    #[arg(long, global = true)]
    graph: Option<String>,
    /// Sample table base path or CSV file.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Comma-separated variable ids to analyse.
    #[arg(long, global = true, value_delimiter = ',')]
    observed: Option<Vec<String>>,
    /// Samples drawn for synthetic data.
    #[arg(long, global = true)]
    n_samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset.
    Gen,
    /// Fit a two-view model and report recovery scores when ground truth exists.
    FitBasis,
    /// Choose the shared width by sweeping it.
    SweepBasis,
    /// Run the hierarchy search.
    Discover,
    /// Pairwise prediction matrix of the selected variables.
    EvalMatrix,
    /// Regenerate one of the reported tables or figures.
    Reproduce {
        #[arg(value_enum)]
        target: TargetArg,
    },
    /// Re-execute the config recorded in a manifest and compare artifacts.
    Rerun { manifest: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Table1,
    Table2,
    Fig4,
    Samplesize,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Table1 => Target::Table1,
            TargetArg::Table2 => Target::Table2,
            TargetArg::Fig4 => Target::Fig4,
            TargetArg::Samplesize => Target::Samplesize,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    match &cli.command {
        Command::Gen => cfg.mode = Mode::Gen,
        Command::FitBasis => cfg.mode = Mode::FitBasis,
        Command::SweepBasis => cfg.mode = Mode::SweepBasis,
        Command::Discover => cfg.mode = Mode::Discover,
        Command::EvalMatrix => cfg.mode = Mode::EvalMatrix,
        Command::Reproduce { target } => {
            cfg.mode = Mode::Reproduce;
            cfg.target = Some((*target).into());
        }
        Command::Rerun { .. } => {}
    }
    if let Some(p) = &cli.preset {
        cfg.preset = p.clone();
    }
    if let Some(s) = &cli.seed_list {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(g) = &cli.graph {
        cfg.graph = Some(g.clone());
    }
    if let Some(d) = &cli.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &cli.observed {
        cfg.observed = o.clone();
    }
    cfg.tau = cli.tau.or(cfg.tau);
    cfg.eps = cli.eps.or(cfg.eps);
    cfg.n_samples = cli.n_samples.or(cfg.n_samples);
    Ok(cfg)
}

fn configure_threads() -> Result<(), HarnessError> {
    let Ok(value) = std::env::var("HIERCAUSE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().map_err(|_| HarnessError::Config {
        pointer: String::new(),
        message: format!("HIERCAUSE_THREADS={value:?} is not a thread count"),
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| HarnessError::Experiment(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn execute(cli: &Cli) -> Result<ExitCode, HarnessError> {
    configure_threads()?;
    if let Command::Rerun { manifest } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("rerun"));
        let (summary, differing) = harness::rerun(manifest, &out)?;
        println!(
            "{}",
            json!({
                "out": summary.out,
                "artifacts": summary.manifest.artifacts.len(),
                "differing": differing,
                "notes": summary.notes,
            })
        );
        return Ok(if differing.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(4) });
    }
    let cfg = build_config(cli)?;
    let summary = harness::run(&cfg)?;
    for note in &summary.notes {
        eprintln!("note: {note}");
    }
    println!(
        "{}",
        json!({
            "out": summary.out,
            "config_hash": summary.manifest.config_hash,
            "artifacts": summary.manifest.artifacts.len(),
            "not_converged": summary.not_converged,
            "notes": summary.notes,
        })
    );
    Ok(if summary.not_converged.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            let pointer = match &e {
                HarnessError::Config { pointer, .. } => Some(pointer.clone()),
                _ => None,
            };
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string(), "pointer": pointer }));
            ExitCode::from(if matches!(e, HarnessError::Config { .. }) { 2 } else { 1 })
        }
    }
}
