use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ecoalloc::forecast::{nmae, ForecastSeries, NmaeOptions};
use ecoalloc::fleetgen::{generate_fleet, manifest, synthetic_emission_model};
use ecoalloc::models::EnergyModel;
use ecoalloc::routes::write_fleet;
use ecoalloc::scenario::{config_reference, load_and_run, RunOptions, SolverChoice};
use ecoalloc::utility::ObjectiveMode;

#[derive(Parser)]
#[command(name = "ecoalloc", version, about = "Allocate renewable energy across a hybrid bus fleet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its outputs.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// aimd, admm, oracle or all.
        #[arg(long)]
        solver: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic fleet with its manifest.
    GenFleet {
        #[arg(long)]
        buses: usize,
        #[arg(long)]
        seed: u64,
        /// Directory for fleet.json and manifest.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Forecast error statistics for a `day,predicted_kwh,actual_kwh` CSV.
    Nmae {
        forecast: PathBuf,
        /// Normalisation base in kWh; defaults to the largest value in the file.
        #[arg(long)]
        capacity_norm: Option<f64>,
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
    },
    /// Print the scenario configuration reference.
    Defaults,
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

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            solver,
            seed,
        } => {
            let solver = solver.map(|s| s.parse::<SolverChoice>()).transpose()?;
            let report = load_and_run(&config, &RunOptions { out, solver, seed })
                .with_context(|| format!("running {}", config.display()))?;
            println!("E_av {} kWh ({})", report.e_av, report.e_av_source);
            println!("optimal savings {:.3} kg", report.optimal_savings_g / 1000.0);
            for r in &report.solvers {
                println!(
                    "{:<7} savings {:.3} kg, oracle gap {:.3}%, consensus spread {:.3}%",
                    r.solver.name(),
                    r.savings_g / 1000.0,
                    r.oracle_gap * 100.0,
                    r.kkt.consensus_spread * 100.0
                );
                for w in &r.warnings {
                    println!("        warning: {w}");
                }
            }
            if let Some(c) = &report.comparison {
                print!("{}", c.render());
            }
            println!("wrote {} files to {}", report.files.len(), report.output_dir.display());
        }
        Command::GenFleet { buses, seed, out } => {
            anyhow::ensure!(buses >= 1, "--buses must be at least 1");
            let routes = generate_fleet(buses, seed);
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_fleet(out.join("fleet.json"), &routes)?;
            let m = manifest(
                &routes,
                seed,
                &EnergyModel::default(),
                &synthetic_emission_model(),
                ObjectiveMode::default(),
            )?;
            let path = out.join("manifest.json");
            ecoalloc::io::write_atomic(&path, serde_json::to_string_pretty(&m)?.as_bytes())?;
            println!(
                "wrote {} buses ({:.1} km, {:.1} kWh) to {}",
                buses,
                m.total_length_km,
                m.total_capacity_kwh,
                out.display()
            );
        }
        Command::Nmae {
            forecast,
            capacity_norm,
            threshold,
            bin_width,
        } => {
            let series = ForecastSeries::load_csv(&forecast, capacity_norm)?;
            let report = nmae(&series, &NmaeOptions { bin_width, threshold })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Defaults => print!("{}", config_reference()),
    }
    Ok(())
}
