use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cost_unroll_cli::config::Config;
use cost_unroll_cli::run::{self, RunError};
use cost_unroll_cli::verify::{self, Fault, Level};

const EXIT_INVALID: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "cost-unroll", version, about = "Unrolled smoothness cost experiments and oracle checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every regularizer on every seed and write logs, summary and plots.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "COST_UNROLL_OUT", default_value = "cost-unroll-out")]
        out: PathBuf,
        /// Overrides the config's seed list; repeat for several seeds.
        #[arg(long = "seeds", num_args = 1..)]
        seeds: Vec<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the oracle suite and print a pass/fail table.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: Level,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Masked versus unmasked smoothing of a synthetic two-channel field.
    Demo2d {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &std::path::Path) -> Result<Config, ExitCode> {
    Config::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_INVALID)
    })
}

fn cmd_run(config: PathBuf, out: PathBuf, seeds: Vec<u64>, jobs: Option<usize>) -> ExitCode {
    let mut cfg = match load(&config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match run::run(&cfg, &out, jobs) {
        Ok(outcome) => {
            println!("{:<12} {:>8} {:>12} {:>14}", "regularizer", "seed", "final_error", "final_grad_norm");
            for row in &outcome.summary {
                let seed = row.seed.map_or_else(|| "median".into(), |s| s.to_string());
                println!(
                    "{:<12} {:>8} {:>12.5e} {:>14.5e}",
                    row.regularizer.name(),
                    seed,
                    row.final_error,
                    row.final_grad_norm
                );
            }
            if let Some(d) = outcome.demo2d {
                println!(
                    "demo2d: mean |grad F| on edge masked {:.5e} unmasked {:.5e}",
                    d.masked.on_edge, d.unmasked.on_edge
                );
            }
            println!("wrote {}", out.display());
            if outcome.diverged.is_empty() {
                ExitCode::SUCCESS
            } else {
                for d in &outcome.diverged {
                    eprintln!("error: {d}");
                }
                ExitCode::from(EXIT_DIVERGED)
            }
        }
        Err(RunError::Setup(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_verify(level: Level, fault: Option<Fault>) -> ExitCode {
    let results = verify::run_suite(level, fault);
    print!("{}", verify::render_table(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn cmd_demo2d(config: PathBuf) -> ExitCode {
    let cfg = match load(&config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let demo = cfg.demo2d.unwrap_or_default();
    match run::demo2d(&demo) {
        Ok(s) => {
            println!("{:<10} {:>14} {:>14}", "run", "on_edge", "off_edge");
            println!("{:<10} {:>14.6e} {:>14.6e}", "masked", s.masked.on_edge, s.masked.off_edge);
            println!("{:<10} {:>14.6e} {:>14.6e}", "unmasked", s.unmasked.on_edge, s.unmasked.off_edge);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            jobs,
        } => cmd_run(config, out, seeds, jobs),
        Command::Verify { level, inject_fault } => cmd_verify(level, inject_fault),
        Command::Demo2d { config } => cmd_demo2d(config),
    }
}
