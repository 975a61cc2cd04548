use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use krasovskii_cli::commands::{self, load_scenario};
use krasovskii_cli::{CliError, Overrides, RunReport, Suite};

#[derive(Parser)]
#[command(name = "krasovskii", version, about = "Sampled-data passivity scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write trajectory, controller and report CSVs.
    Simulate {
        file: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run an audit suite; exits with 1 when a check fails.
    Verify {
        file: PathBuf,
        #[arg(value_enum)]
        suite: Suite,
        #[command(flatten)]
        flags: Flags,
    },
    /// Print the steady state of the scenario's plant.
    Equilibrium {
        file: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Compare sampled and continuous-time control inputs.
    Compare {
        file: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Args)]
struct Flags {
    /// Sampling period (s).
    #[arg(long)]
    delta: Option<f64>,
    /// Final time (s).
    #[arg(long)]
    horizon: Option<f64>,
    /// Directory for CSV output.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed of the random suites.
    #[arg(long)]
    seed: Option<u64>,
    /// Audit tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

fn run(cli: Cli) -> Result<RunReport, CliError> {
    let (file, flags) = match &cli.command {
        Command::Simulate { file, flags }
        | Command::Verify { file, flags, .. }
        | Command::Equilibrium { file, flags }
        | Command::Compare { file, flags } => (file, flags),
    };
    let o = Overrides {
        delta: flags.delta,
        horizon: flags.horizon,
        out_dir: flags.out_dir.clone(),
        seed: flags.seed,
        tolerance: flags.tolerance,
    };
    let scenario = load_scenario(file, &o)?;
    match cli.command {
        Command::Simulate { .. } => commands::simulate(&scenario, &o),
        Command::Verify { suite, .. } => {
            let report = commands::verify(&scenario, suite, &o)?;
            if report.passed() {
                Ok(report)
            } else {
                print!("{report}");
                let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
                Err(CliError::Violation(failed.join(", ")))
            }
        }
        Command::Equilibrium { .. } => commands::equilibrium(&scenario),
        Command::Compare { .. } => commands::compare(&scenario, &o),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
