use clap::{Parser, Subcommand};
use manip_harness::config::RunConfig;
use manip_harness::experiment::run_experiment;
use manip_harness::report::{aggregate_report, emit_plot_data, render_table};
use manip_harness::HarnessError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Train classifiers jointly with learned data weighting or augmentation
/// and compare them against fixed baselines over many seeds.
#[derive(Parser)]
#[command(name = "manip", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a configured experiment over all its seeds.
    Run {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the seed list with 1..=N.
        #[arg(long)]
        seeds: Option<u64>,
        /// Output directory (default: runs/<run name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge run summaries into a method x setting accuracy table.
    Report {
        /// Run directories containing summary.json.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Emit per-epoch long-format aggregates of one run directory.
    PlotData {
        dir: PathBuf,
        /// One of: train_loss, val_loss, val_accuracy, test_accuracy,
        /// selected_test_accuracy.
        #[arg(long, default_value = "selected_test_accuracy")]
        metric: String,
    },
}

// Exit codes: 0 success, 1 configuration error, 2 runtime failure in every
// seed of a run.
fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(HarnessError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run { config, seeds, out } => {
            let mut config = RunConfig::from_path(&config)?;
            if let Some(n) = seeds {
                if n == 0 {
                    return Err(HarnessError::Config("--seeds must be at least 1".into()));
                }
                config.seeds = Some((1..=n).collect());
                config.seed_count = None;
            }
            let out_dir = out.unwrap_or_else(|| PathBuf::from("runs").join(config.run_id()));
            let output = run_experiment(&config, &out_dir)?;
            for m in &output.summary.methods {
                let cell = match (m.mean_test_accuracy, m.std_test_accuracy) {
                    (Some(mean), Some(std)) => format!("{:>6.2} ± {:.2}", mean * 100.0, std * 100.0),
                    _ => "     —".to_string(),
                };
                println!(
                    "{:<14} {cell}  ({} seeds{})",
                    m.name,
                    m.n_seeds,
                    if m.failed_seeds.is_empty() {
                        String::new()
                    } else {
                        format!(", failed: {:?}", m.failed_seeds)
                    }
                );
            }
            println!("metrics written to {}", out_dir.display());
            if output.all_failed() {
                eprintln!("error: every seed failed");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dirs } => {
            let table = aggregate_report(&dirs)?;
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", render_table(&table));
            Ok(ExitCode::SUCCESS)
        }
        Command::PlotData { dir, metric } => {
            let mut stdout = std::io::stdout().lock();
            emit_plot_data(&dir, &metric, &mut stdout)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
