use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hybridpack::cli::{cmd_figures, cmd_simulate, cmd_sweep, FigureOptions};

#[derive(Debug, Parser)]
#[command(name = "hybridpack", version, about = "Dual-chemistry battery pack simulator")]
struct Args {
    /// Accepted for script compatibility. Every run is deterministic.
    #[arg(long, global = true)]
    seedless: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the reference figure data (fig1.csv, fig2.csv, fig3.csv).
    Figures {
        #[arg(long)]
        out: PathBuf,
        /// Scale the pulsed protocol to the constant run's mean flux.
        #[arg(long)]
        charge_matched: bool,
    },
    /// Run the Cartesian sweep in the config's [sweep] block.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match &args.command {
        Command::Simulate { config, out } => cmd_simulate(config, out).map(|trace| {
            println!(
                "simulated {} steps ({} rest events); outputs in {}",
                trace.steps,
                trace.rest_event_count(),
                out.display()
            );
        }),
        Command::Figures { out, charge_matched } => cmd_figures(
            out,
            FigureOptions {
                charge_matched: *charge_matched,
            },
        )
        .map(|paths| {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }),
        Command::Sweep { config, out, workers } => cmd_sweep(config, out, *workers).map(|rows| {
            println!(
                "ran {} sweep points; summary in {}",
                rows.len(),
                out.join("summary.csv").display()
            );
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
