//! `swcrt`: planning and analysis of stepped-wedge cluster randomized trials
//! with anticipation and exposure-time effects.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swcrt::Error;

use commands::*;

#[derive(Debug, Parser)]
#[command(name = "swcrt", version, about = "Stepped-wedge trial design, bias, power and simulation")]
#[command(after_help = "Parameter names of the reference planning function are accepted as aliases: \
model, trt (--effect), I, J, K, design, rho, sigma_sq (--sigma-sq), alpha.\n\
Exit codes: 0 ok, 2 E_CONFIG, 3 E_RANK, 4 E_CONVERGENCE, 5 E_IO.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Treatment, anticipation and exposure-time indicators of a layout.
    Design(DesignCmd),
    /// Integer design constants entering the variance formulas.
    Constants(ConstantsCmd),
    /// Closed-form bias weights.
    Bias(BiasCmd),
    /// Expected working-model estimates under a given truth.
    Expect(ExpectCmd),
    /// Analytic variance of the treatment-effect estimator.
    Variance(VarianceCmd),
    /// Power of the Wald test for a given effect.
    Power(PowerCmd),
    /// Minimum detectable effect at a target power.
    Mde(MdeCmd),
    /// Smallest number of clusters or cluster-period size reaching a target power.
    Size(SizeCmd),
    /// Power-ratio grid of two working models, or the ratio at which their powers cross.
    Grid(GridCmd),
    /// Monte Carlo study of the working models.
    Simulate(SimulateCmd),
    /// Fit working models to a long-format dataset.
    Fit(FitCmd),
    /// Likelihood-ratio test of exposure-time heterogeneity.
    Lrt(LrtCmd),
}

fn exit_code(e: &Error) -> u8 {
    match e.code() {
        "E_CONFIG" => 2,
        "E_RANK" => 3,
        "E_CONVERGENCE" => 4,
        _ => 5,
    }
}

fn fail(code: &str, msg: &str, status: u8) -> ExitCode {
    // first paragraph only, folded onto one line
    let line: Vec<&str> = msg.lines().map(str::trim).take_while(|l| !l.is_empty()).collect();
    eprintln!("error[{code}]: {}", line.join(" "));
    ExitCode::from(status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let msg = text.trim_start_matches("error: ");
            return fail("E_CONFIG", msg, 2);
        }
    };
    let result = match cli.command {
        Command::Design(c) => c.run(),
        Command::Constants(c) => c.run(),
        Command::Bias(c) => c.run(),
        Command::Expect(c) => c.run(),
        Command::Variance(c) => c.run(),
        Command::Power(c) => c.run(),
        Command::Mde(c) => c.run(),
        Command::Size(c) => c.run(),
        Command::Grid(c) => c.run(),
        Command::Simulate(c) => c.run(),
        Command::Fit(c) => c.run(),
        Command::Lrt(c) => c.run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string(), exit_code(&e)),
    }
}
