use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use rmntr_harness::{compare, comparison_text, exit_code, run, table_header, table_row, write_outputs, RunConfig};

#[derive(Parser)]
#[command(name = "rmntr", version, about = "Multilevel proximal trust-region benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and write history, report and solution files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Solve two configurations of the same problem and align their histories.
    Compare {
        #[arg(long)]
        config_a: PathBuf,
        #[arg(long)]
        config_b: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, out, seed, levels } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.problem.set_seed(s);
            }
            if let Some(l) = levels {
                cfg.levels = l;
            }
            let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let output = run(&cfg)?;
            write_outputs(&dir, &output)?;
            println!("{}", table_header());
            println!("{}", table_row(&output.report()));
            Ok(output.exit_code())
        }
        Command::Compare { config_a, config_b } => {
            let a = RunConfig::load(&config_a)?;
            let b = RunConfig::load(&config_b)?;
            let (ra, rb, cmp) = compare(&a, &b)?;
            print!("{}", comparison_text(&cmp));
            println!("{}", table_header());
            println!("{}", table_row(&ra.report()));
            println!("{}", table_row(&rb.report()));
            Ok(exit_code(ra.result.status).max(exit_code(rb.result.status)))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
