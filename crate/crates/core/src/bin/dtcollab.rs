//! Command-line driver: run experiment files, validate them, check toy instances.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dt_collab::experiment::{emit_csv, run_experiment, write_csv, ExperimentSpec};
use dt_collab::oracle::{check_instance, ToyInstance};
use dt_collab::simulation::Policy;
use dt_collab::Result;

#[derive(Parser)]
#[command(name = "dtcollab", version, about = "Device-edge collaborative inference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, sweep point, seed) of an experiment file and write CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed list, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Runs a single policy instead of the file's list.
        #[arg(long)]
        policy: Option<Policy>,
        /// CSV destination; `-` or no path in the file means stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check an experiment file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check backward induction, enumeration and reduction on a toy instance.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            policy,
            out,
        } => {
            let mut spec = ExperimentSpec::load(&config)?;
            if let Some(seeds) = seeds {
                spec.seeds = seeds;
            }
            if let Some(policy) = policy {
                spec.policies = vec![policy];
            }
            if out.is_some() {
                spec.output_path = out;
            }
            spec.validate()?;
            let metrics = run_experiment(&spec)?;
            match spec.output_path.as_ref().filter(|p| p.as_os_str() != "-") {
                Some(path) => {
                    emit_csv(&metrics, path)?;
                    eprintln!("wrote {} rows to {}", metrics.len(), path.display());
                }
                None => write_csv(&metrics, std::io::stdout().lock())?,
            }
            Ok(true)
        }
        Command::Validate { config } => {
            let spec = ExperimentSpec::load(&config)?;
            let profile = spec.profile()?;
            println!(
                "ok: {} policies x {} sweep points x {} seeds, {} logical layers, exit after layer {}",
                spec.policies.len(),
                spec.sweep.len(),
                spec.seeds.len(),
                profile.num_layers(),
                profile.exit_index()
            );
            Ok(true)
        }
        Command::Oracle { instance } => {
            let inst = ToyInstance::load(&instance)?;
            let check = check_instance(&inst)?;
            println!("backward induction value   {:.15}", check.induction_value);
            println!("induced stop rule value    {:.15}", check.induced_policy_value);
            let label = format!("best of {} stopping rules", check.enumeration.rule_count);
            println!("{label:<27}{:.15}", check.enumeration.best_value);
            println!("agreement gap              {:.3e}", check.agreement_gap());
            println!(
                "optimal decisions {:?}, kept candidates {:?}",
                check.soundness.optimal, check.soundness.candidates
            );
            let passed = check.passed();
            println!("{}", if passed { "PASS" } else { "FAIL" });
            Ok(passed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
