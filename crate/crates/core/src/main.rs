//! Command-line front end: run a scenario file, run a named preset, or list
//! the presets. Exit codes: 0 success, 1 validation problem, 2 runtime
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adrsim::cli::{self, ResultRow};
use adrsim::{sim, Error};

#[derive(Parser)]
#[command(name = "adrsim", version, about = "LoRaWAN ADR network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario file and write its metrics as CSV.
    Run {
        /// Scenario file (JSON; unknown fields rejected).
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a named experiment preset across repetitions.
    Preset {
        name: String,
        /// Repetitions per swept value (default: the preset's own count).
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for independent runs (0 = all cores).
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
    /// List the available experiment presets.
    ListPresets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut cause = std::error::Error::source(&e);
            while let Some(c) = cause {
                eprintln!("  caused by: {c}");
                cause = c.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidScenario(_)
        | Error::ScenarioParse { .. }
        | Error::UnknownPreset(_)
        | Error::InvalidSpreadingFactor(_)
        | Error::InvalidTxPower(_)
        | Error::DistanceBelowReference { .. }
        | Error::UnknownDevice(_)
        | Error::UnknownAnchor { .. }
        | Error::EmptyAggregate => 1,
        Error::Io { .. } | Error::Csv(_) => 2,
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { scenario, seed, out } => {
            let mut s = cli::load_scenario(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let trace = sim::run(&s)?;
            let summary = cli::summarize_run(&trace, &s.energy);
            let name = scenario
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".to_string());
            let rows: Vec<ResultRow> = summary
                .into_iter()
                .map(|(metric, metric_value)| ResultRow {
                    preset: name.clone(),
                    param: "scenario".into(),
                    value: 0.0,
                    rep: 0,
                    seed: s.seed,
                    metric,
                    metric_value,
                })
                .collect();
            cli::write_csv(&rows, &out)?;
            println!(
                "{} devices, {} transmissions recorded, results in {}",
                trace.n_devices_final,
                trace.transmissions.len(),
                out.display()
            );
            Ok(())
        }
        Command::Preset { name, reps, seed, out, parallel } => {
            let preset = cli::preset(&name)?;
            let reps = reps.unwrap_or(preset.repetitions);
            let rows = cli::run_preset(&preset, seed, reps, parallel)?;
            cli::write_csv(&rows, &out)?;
            println!(
                "{}: {} values x {} reps, {} rows in {}",
                preset.name,
                preset.values.len(),
                reps,
                rows.len(),
                out.display()
            );
            Ok(())
        }
        Command::ListPresets => {
            for p in cli::presets() {
                let values: Vec<String> = p.values.iter().map(|v| cli::fmt_sig6(*v)).collect();
                println!(
                    "{:<18} sweeps {} over [{}], {} reps\n{:<18} {}",
                    p.name,
                    p.param.name(),
                    values.join(", "),
                    p.repetitions,
                    "",
                    p.description
                );
            }
            Ok(())
        }
    }
}
