//! Scenario runner: validate and execute scenario files, run probability
//! sweeps, and summarize result directories.
//!
//! Exit codes: 0 on success, 2 on scenario validation or parse failures,
//! 1 on any other error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use flowprobe::scenario::{load_scenario, replay_experiment, run_experiment, RunOptions};
use flowprobe::ScenarioError;

#[derive(Parser, Debug)]
#[command(name = "flowprobe", about = "Deterministic SDN reconnaissance simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write its outputs.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: out/<scenario-name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Monte Carlo trials override for sweep sections.
        #[arg(long)]
        trials: Option<u64>,
        /// Console output format for the report.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Re-run the recorded injections with the side-channel detached
        /// and check the traces match.
        #[arg(long)]
        check_passivity: bool,
    },
    /// Run the probability sweep of a scenario's sweep section.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Summarize a result directory written by `run`.
    Report {
        result_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Validate a scenario file.
    Validate { scenario: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match dispatch(args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

/// Prints to stdout, tolerating a consumer that closed the pipe early.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn dispatch(args: Args) -> Result<ExitCode> {
    match args.command {
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(s) => {
                println!("ok: {} ({})", s.name, scenario.display());
                Ok(ExitCode::SUCCESS)
            }
            Err(e @ (ScenarioError::Validation { .. } | ScenarioError::Parse { .. })) => {
                eprintln!("invalid: {e}");
                Ok(ExitCode::from(2))
            }
            Err(e) => Err(e.into()),
        },
        Command::Run {
            scenario,
            seed,
            out,
            trials,
            format,
            check_passivity,
        } => {
            let spec = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e @ (ScenarioError::Validation { .. } | ScenarioError::Parse { .. })) => {
                    eprintln!("invalid: {e}");
                    return Ok(ExitCode::from(2));
                }
                Err(e) => return Err(e.into()),
            };
            let options = RunOptions { seed, trials };
            let result = run_experiment(&spec, options)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from("out").join(&spec.name));
            result.write_outputs(&out_dir)?;
            if check_passivity {
                let replay = replay_experiment(&spec, &result.injections, options)?;
                if replay != result.trace_csv {
                    bail!("side-channel passivity check failed: traces differ");
                }
                println!("passivity: traces identical with the side-channel detached");
            }
            match format {
                Format::Json => emit(&result.report.to_json()),
                Format::Csv => {
                    println!("key,value");
                    println!("scenario,{}", result.summary.scenario);
                    println!("seed,{}", result.summary.seed);
                    println!("mechanism,{:?}", result.report.mechanism);
                    println!("detections,{}", result.summary.detections);
                    println!("rule_installs,{}", result.summary.rule_installs);
                }
            }
            println!("outputs written to {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            scenario,
            seed,
            out,
            trials,
        } => {
            let spec = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e @ (ScenarioError::Validation { .. } | ScenarioError::Parse { .. })) => {
                    eprintln!("invalid: {e}");
                    return Ok(ExitCode::from(2));
                }
                Err(e) => return Err(e.into()),
            };
            if spec.sweep.is_none() {
                bail!("scenario {} has no sweep section", spec.name);
            }
            let result = run_experiment(&spec, RunOptions { seed, trials })?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from("out").join(&spec.name));
            result.write_outputs(&out_dir)?;
            let cells = &result.sweep_cells;
            let worst = cells
                .iter()
                .map(|c| (c.p_monte_carlo - c.p_formula).abs())
                .fold(0.0f64, f64::max);
            println!(
                "{} cells, max |simulated - formula| = {worst:.6}",
                cells.len()
            );
            println!("outputs written to {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { result_dir, format } => {
            let report_path = result_dir.join("report.json");
            let summary_path = result_dir.join("summary.json");
            let report = std::fs::read_to_string(&report_path)
                .with_context(|| format!("reading {}", report_path.display()))?;
            let summary = std::fs::read_to_string(&summary_path)
                .with_context(|| format!("reading {}", summary_path.display()))?;
            match format {
                Format::Json => {
                    emit(&report);
                    emit(&summary);
                }
                Format::Csv => {
                    let summary: serde_json::Value = serde_json::from_str(&summary)?;
                    let mut out = String::from("key,value\n");
                    if let Some(map) = summary.as_object() {
                        for (k, v) in map {
                            out.push_str(&format!("{k},{v}\n"));
                        }
                    }
                    emit(&out);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
