use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tplec_cli::{cmd_curve, cmd_dar, cmd_ftr, CurveArgs, DarArgs, FtrArgs};

#[derive(Parser)]
#[command(
    name = "tplec",
    version,
    about = "Power-law-with-cutoff fits with Taylor's power law bands"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fatality-time fits per continent and for the world.
    Ftr(FtrArgs),
    /// Diversity accumulation fit on an abundance table.
    Dar(DarArgs),
    /// Plot data for a fitted curve.
    Curve(CurveArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ftr(a) => cmd_ftr(a),
        Command::Dar(a) => cmd_dar(a),
        Command::Curve(a) => cmd_curve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
