use std::path::PathBuf;
use std::process::ExitCode;

use caim_cli::{commands, with_workers, CliError, RunConfig};
use caim_core::eval::Method;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "caim",
    version,
    about = "Cooperative AoA estimation via QUBO annealing"
)]
struct Cli {
    /// TOML configuration file; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed` and `ising.anneal.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `experiment.trials`.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory (a file path for `build-qubo`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for trial parallelism; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Print the fully resolved configuration as TOML before running.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scene and write per-AP snapshot files.
    Simulate,
    /// Export the joint QUBO of a snapshot directory as text.
    BuildQubo {
        #[arg(long)]
        input: PathBuf,
    },
    /// Estimate AoAs from a snapshot directory.
    Solve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "caim")]
        method: Method,
        /// Check the annealed energy against exhaustive search (≤ 20 variables).
        #[arg(long)]
        verify_brute_force: bool,
    },
    /// Monte-Carlo evaluation: ECDFs, median table, optional AP-count sweep.
    Evaluate {
        /// Restrict to these methods (repeatable).
        #[arg(long)]
        method: Vec<Method>,
    },
    /// Regularization sweep over the configured (gamma, mu) grid.
    Sweep,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.experiment.seed = seed;
        config.ising.anneal.seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.experiment.trials = trials;
    }
    if let Command::Evaluate { method } = &cli.command {
        if !method.is_empty() {
            config.experiment.methods = method.clone();
        }
    }
    config.validate()?;
    if cli.print_config {
        print!("{}", config.to_toml()?);
    }

    let out = cli.out.clone();
    let out_dir = || out.clone().unwrap_or_else(|| PathBuf::from("out"));
    with_workers(cli.workers, || match cli.command {
        Command::Simulate => {
            let dir = out_dir();
            let paths = commands::cmd_simulate(&config, &dir)?;
            println!("wrote {} snapshots to {}", paths.len(), dir.display());
            Ok(())
        }
        Command::BuildQubo { input } => {
            let path = out.clone().unwrap_or_else(|| PathBuf::from("qubo.txt"));
            let problem = commands::cmd_build_qubo(&config, &input, &path)?;
            println!(
                "wrote {} variables to {}",
                problem.num_vars(),
                path.display()
            );
            Ok(())
        }
        Command::Solve {
            input,
            method,
            verify_brute_force,
        } => {
            let dir = out_dir();
            let report = commands::cmd_solve(&config, &input, &dir, method, verify_brute_force)?;
            for ap in &report.aps {
                match ap.estimate.los_angle_deg {
                    Some(los) => println!(
                        "AP{}: LoS {los:.2} deg (truth {:.2}, error {:.2})",
                        ap.ap, ap.truth_los_deg, ap.los_error_deg
                    ),
                    None => println!("AP{}: no path detected", ap.ap),
                }
            }
            if let Some(opt) = report.brute_force_energy {
                println!("brute force optimum {opt:.6} matched");
            }
            Ok(())
        }
        Command::Evaluate { .. } => {
            let dir = out_dir();
            let report = commands::cmd_evaluate(&config, &dir)?;
            for s in &report.summary {
                println!(
                    "{:>5}: average median {:.3} deg, average mean {:.3} deg, empty {}",
                    s.method.name(),
                    s.average_median_deg,
                    s.average_mean_deg,
                    s.empty_count
                );
            }
            println!("report written to {}", dir.display());
            Ok(())
        }
        Command::Sweep => {
            let dir = out_dir();
            let points = commands::cmd_sweep(&config, &dir)?;
            for p in &points {
                println!(
                    "gamma {:<5} mu {:<5} {:>5}: average median {:.3} deg",
                    p.gamma,
                    p.mu,
                    p.method.name(),
                    p.average_median_deg
                );
            }
            Ok(())
        }
    })?
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
