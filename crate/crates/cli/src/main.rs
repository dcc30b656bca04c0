use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hybrid_observer_cli::{cmd_design, cmd_resilience, cmd_simulate, cmd_verify, exit, OUT_ENV};

#[derive(Parser)]
#[command(name = "hybrid-observer", version, about = "Design and simulate distributed hybrid observers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute gains, attenuation constants and the iteration count; write certificate.json.
    Design {
        scenario: PathBuf,
        #[arg(long, help = format!("output directory (else ${OUT_ENV}, else the scenario's)"))]
        out: Option<PathBuf>,
    },
    /// Run the observer under a certificate and write trace.csv, events.csv and report.json.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sample_step: Option<f64>,
    },
    /// Run the full check battery; exits 2 if any check fails.
    Verify { scenario: PathBuf },
    /// Tabulate the subsets surviving the loss of up to `vbar` agents and report q*.
    Resilience {
        scenario: PathBuf,
        #[arg(long)]
        vbar: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Design { scenario, out } => cmd_design(scenario, out.as_deref()).map(|(o, _)| o),
        Command::Simulate { scenario, cert, out, sample_step } => {
            cmd_simulate(scenario, cert, out.as_deref(), *sample_step).map(|(o, _)| o)
        }
        Command::Verify { scenario } => cmd_verify(scenario).map(|(o, _)| o),
        Command::Resilience { scenario, vbar } => cmd_resilience(scenario, *vbar),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.text);
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::INFEASIBLE as u8)
        }
    }
}
