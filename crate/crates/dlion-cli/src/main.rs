use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlion_cli::commands::{self, BandwidthArgs, CheckArgs, RunArgs, SweepArgs};
use dlion_cli::exit_code;

#[derive(Parser)]
#[command(
    name = "dlion",
    version,
    about = "Deterministic simulator for distributed training with sign-based \
             optimizers and communication-efficient baselines"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one training run, writing run.csv and summary.json
    Run(RunArgs),
    /// Run the base config once per value along one axis
    Sweep(SweepArgs),
    /// Run pinned-seed property suites and print a JSON report
    Check(CheckArgs),
    /// Print per-method bandwidth requirements for a given d and N
    Bandwidth(BandwidthArgs),
    /// Config file helpers
    Config {
        #[command(subcommand)]
        action: ConfigCmd,
    },
}

#[derive(Subcommand)]
enum ConfigCmd {
    /// Print the default config as TOML
    PrintDefaults,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Run(args) => commands::cmd_run(args).map(|()| ExitCode::SUCCESS),
        Cmd::Sweep(args) => commands::cmd_sweep(args).map(|()| ExitCode::SUCCESS),
        Cmd::Check(args) => commands::cmd_check(args).map(|ok| {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }),
        Cmd::Bandwidth(args) => commands::cmd_bandwidth(args).map(|()| ExitCode::SUCCESS),
        Cmd::Config {
            action: ConfigCmd::PrintDefaults,
        } => commands::cmd_print_defaults().map(|()| ExitCode::SUCCESS),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
