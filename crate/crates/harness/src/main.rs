use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lazydagger_harness::{calibrate, compare, run_experiment_with, validate_config, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "lazydagger", version, about = "Run and compare gated imitation-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (resumes a matching partial run in the output directory).
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads for the seed sweep (default: one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Compare two finished runs; the first plays the role of the candidate.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Comma-separated latencies L for the B(L) table
        #[arg(long, value_delimiter = ',')]
        latency_grid: Option<Vec<f64>>,
        /// Write the comparison JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print it with defaults applied.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pretrain and print the resolved thresholds for each seed.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated latencies L for the B(L) columns
    #[arg(long, value_delimiter = ',')]
    latency_grid: Option<Vec<f64>>,
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut config = read_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(grid) = &common.latency_grid {
        config.latency_grid = grid.clone();
    }
    Ok(config.resolve()?)
}

fn read_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(validate_config(&text)?)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { common, jobs } => {
            let config = load(&common)?;
            let manifest = run_experiment_with(
                &config,
                &RunOptions {
                    jobs,
                    stop_after_epochs: None,
                },
            )?;
            let summary = lazydagger_harness::RunSummary::load(&config.output_dir)?;
            println!(
                "{} on {}: seeds {:?}, C={} D={} mean intervention length {}, final test success {:.3}",
                summary.algorithm,
                summary.env_id,
                summary.seeds,
                summary.totals.context_switches,
                summary.totals.supervisor_actions,
                summary
                    .mean_intervention_length
                    .map_or("n/a".to_string(), |l| format!("{l:.2}")),
                summary.final_test_success_rate,
            );
            println!(
                "wrote {} (config hash {})",
                config.output_dir.display(),
                &manifest.config_hash[..12]
            );
        }
        Command::Compare {
            run_a,
            run_b,
            latency_grid,
            out,
        } => {
            let grid = match latency_grid {
                Some(g) => g,
                None => lazydagger_harness::RunSummary::load(&run_a)?.latency_grid,
            };
            if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                bail!("latency grid values must be finite and >= 0");
            }
            let cmp = compare(&run_a, &run_b, &grid)?;
            let text = serde_json::to_string_pretty(&cmp)?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
        }
        Command::Validate { config } => {
            let c = read_config(&config)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
        Command::Calibrate { common } => {
            let config = load(&common)?;
            let rows: Vec<_> = calibrate(&config)?
                .into_iter()
                .map(|(seed, t)| serde_json::json!({ "seed": seed, "thresholds": t }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
    }
    Ok(())
}
