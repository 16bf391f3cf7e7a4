use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use unlearn_cli::aggregate;
use unlearn_cli::experiment::prepare_out_dir;
use unlearn_cli::{CliError, CliResult, Experiment, ExperimentConfig};
use unlearn_core::evaluation::UnlearnReport;
use unlearn_core::persist::write_new;

/// Forget-vector unlearning experiments.
#[derive(Parser)]
#[command(name = "unlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long, env = "UNLEARN_OUT_DIR")]
    out: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model and write its checkpoint.
    Train(Common),
    /// Unlearn with the configured method and write a report.
    Unlearn(Common),
    /// Compose class-wise forget vectors.
    Compose(Common),
    /// Robustness and hyperparameter sweeps.
    Sweep(Common),
    /// Aggregate reports into mean and standard deviation tables.
    Report {
        /// Report files; defaults to every report in the output directory.
        paths: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "UNLEARN_OUT_DIR")]
        out: Option<PathBuf>,
        /// Accepted for symmetry with the other commands; unused.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn experiment(common: &Common) -> CliResult<Experiment> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    prepare_out_dir(&out)?;
    Experiment::new(cfg, out)
}

fn report_paths(out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("report-") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn report(paths: Vec<PathBuf>, config: Option<PathBuf>, out: Option<PathBuf>) -> CliResult<()> {
    let out = match (out, config) {
        (Some(o), _) => o,
        (None, Some(c)) => ExperimentConfig::load(&c)?.out_dir,
        (None, None) => PathBuf::from("out"),
    };
    let paths = if paths.is_empty() {
        report_paths(&out)?
    } else {
        paths
    };
    if paths.is_empty() {
        return Err(CliError::Config("no reports to aggregate".into()));
    }
    let mut hasher = Sha256::new();
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p)?;
        hasher.update(text.as_bytes());
        reports.push(UnlearnReport::from_json(&text)?);
    }
    let summary = aggregate::summarize(&reports);
    let text = aggregate::to_text(&summary);
    let tag = &hex::encode(hasher.finalize())[..16];
    prepare_out_dir(&out)?;
    write_new(
        &out.join(format!("summary-{tag}.csv")),
        aggregate::to_csv(&summary).as_bytes(),
    )?;
    write_new(&out.join(format!("summary-{tag}.txt")), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(c) => {
            let outcome = experiment(&c)?.train()?;
            println!("{}", outcome.checkpoint.display());
        }
        Command::Unlearn(c) => {
            let outcome = experiment(&c)?.unlearn()?;
            println!("{}", outcome.report);
            println!("{}", outcome.report_path.display());
        }
        Command::Compose(c) => {
            let outcome = experiment(&c)?.compose()?;
            if let Some(r) = &outcome.report {
                println!("{r}");
            }
            if let Some(g) = &outcome.grid {
                let b = g.best_cell();
                println!("best w_a={} w_b={} avg_gap={}", b.w_a, b.w_b, b.avg_gap);
            }
            for f in &outcome.files {
                println!("{}", f.display());
            }
        }
        Command::Sweep(c) => {
            for f in experiment(&c)?.sweep()? {
                println!("{}", f.display());
            }
        }
        Command::Report {
            paths, config, out, ..
        } => report(paths, config, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
