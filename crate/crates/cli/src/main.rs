use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use invscape::commands;
use invscape::config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "invscape", version, about = "Seasonal inventory control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// sac, sac-det, td3 or td3-nosmooth.
    #[arg(long, global = true)]
    algo: Option<String>,
    /// Landscape grid points per axis (odd).
    #[arg(long, global = true)]
    resolution: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per configured seed and write checkpoints and logs.
    Train,
    /// Compare heuristics and trained agents against mean ordering.
    Compare,
    /// Evaluate a 2D actor loss slice around a trained checkpoint.
    Landscape,
    /// Solve the single-store instance exactly and report policy gaps.
    Oracle,
    /// Write the scenario's mean and std trajectories.
    ScenarioExport,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out,
        algo: cli.algo,
        resolution: cli.resolution,
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &ov)?;
    match cli.command {
        Command::Train => {
            for r in commands::train(&cfg)? {
                println!(
                    "seed {}: final eval cost {:.4} -> {}",
                    r.seed,
                    r.final_cost,
                    r.checkpoint.display()
                );
            }
        }
        Command::Compare => {
            println!("policy,mean,min,max,std");
            for r in commands::compare(&cfg)? {
                let s = r.improvement;
                println!("{},{:.2},{:.2},{:.2},{:.2}", r.policy, s.mean, s.min, s.max, s.std);
            }
        }
        Command::Landscape => {
            let r = commands::landscape(&cfg)?;
            println!("grid written to {}", r.path.display());
            println!("center loss {}", r.center_loss);
            if let Some((a, b, v)) = r.min_cell {
                println!("min cell at alpha={a}, beta={b}: {v}");
            }
            println!("cells below center: {:.1}%", 100.0 * r.center_percentile);
            if r.non_finite > 0 {
                println!("{} non-finite cells", r.non_finite);
            }
        }
        Command::Oracle => {
            let (v0, rows) = commands::oracle(&cfg)?;
            println!("oracle V0 = {v0}");
            for r in rows {
                let seed = r.seed.map(|s| format!(" (seed {s})")).unwrap_or_default();
                println!("{}{seed}: cost {:.4}, gap {:.2}%", r.policy, r.cost, r.gap_pct);
            }
        }
        Command::ScenarioExport => {
            println!("{}", commands::scenario_export(&cfg)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
