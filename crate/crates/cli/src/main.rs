//! `ttn-cme`: runs, compares and sizes chemical master equation
//! experiments. Exit codes: 0 success, 2 invalid input, 3 numerical
//! failure, 1 I/O errors.

mod compare;
mod config;
mod error;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ttn_cme::model::validate_factorization;

use crate::error::{invalid, CliError};

#[derive(Parser)]
#[command(name = "ttn-cme", version, about = "Tree tensor network solver for the chemical master equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured solver and write observables to the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// SSA base seed; overrides `ssa.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-time 2-norm error between two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Directory for compare.csv; defaults to the first run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Storage of the configured tree tensor network and of the full grid.
    Footprint {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration, including that every propensity factors over the partition.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print_footprint(rows: &[(&'static str, u128, u128)]) {
    for (name, entries, bytes) in rows {
        println!("{name:>5}: {entries} entries, {bytes} bytes ({})", output::describe_bytes(*bytes));
    }
}

fn compare_into(a: &std::path::Path, b: &std::path::Path, out: &std::path::Path) -> Result<(), CliError> {
    let c = compare::compare(a, b)?;
    std::fs::create_dir_all(out).map_err(error::io_error(out))?;
    compare::write_comparison(&out.join(output::COMPARE), &c)?;
    let (t, max) = c.max();
    println!("max error {max:e} at t = {t}, final error {:e}", c.last());
    Ok(())
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, out, seed } => {
            let mut plan = config::load(&config)?;
            if let Some(seed) = seed {
                plan.seed = seed;
            }
            let out = out
                .or_else(|| plan.out.clone())
                .ok_or_else(|| invalid("output.dir", "missing; set it or pass --out"))?;
            let report = run::run(&plan, &out)?;
            println!(
                "{} run of {} finished in {:.3} s; final mass {}, max mass error {:e}",
                plan.solver.name(),
                plan.model_name,
                report.wall_seconds,
                report.final_mass,
                report.max_mass_error
            );
            print_footprint(&report.footprint);
            if let Some(reference) = &plan.compare_with {
                compare_into(&out, reference, &out)?;
            }
            Ok(())
        }
        Command::Compare { a, b, out } => {
            let out = out.unwrap_or_else(|| a.clone());
            compare_into(&a, &b, &out)
        }
        Command::Footprint { config, out } => {
            let plan = config::load(&config)?;
            let rows = run::footprint(&plan);
            print_footprint(&rows);
            if let Some(out) = out {
                std::fs::create_dir_all(&out).map_err(error::io_error(&out))?;
                output::write_footprint(&out.join(output::FOOTPRINT), &rows)?;
            }
            Ok(())
        }
        Command::Validate { config } => {
            let plan = config::load(&config)?;
            if let Some(tree) = &plan.tree {
                validate_factorization(&plan.network, tree).map_err(|e| invalid("psttn.partition", e))?;
                tree.check_leaf_ranks(|leaf| {
                    tree.leaf_species(leaf).iter().map(|&s| plan.space.extent(s)).product()
                })
                .map_err(|e| invalid("psttn.ranks", e))?;
            }
            println!("{}: valid {} configuration for {}", config.display(), plan.solver.name(), plan.model_name);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
