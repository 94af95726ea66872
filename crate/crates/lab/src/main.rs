use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dispersive_lab::{load, run, RunOptions, KINDS};

/// Run one dispersive-estimate experiment from a TOML config.
#[derive(Parser, Debug)]
#[command(name = "dispersive-lab", version)]
struct Cli {
    /// Experiment config file.
    #[arg(long, required_unless_present = "list_kinds")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to DISPERSIVE_LAB_WORKERS, then the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the experiment kinds and exit.
    #[arg(long)]
    list_kinds: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.list_kinds {
        for k in KINDS {
            println!("{k}");
        }
        return ExitCode::SUCCESS;
    }
    let path = cli.config.expect("required by clap");
    let result = load(&path).and_then(|cfg| {
        run(
            &cfg,
            &RunOptions {
                workers: cli.workers,
                seed: cli.seed,
                out: cli.out.clone(),
            },
        )
    });
    match result {
        Ok((report, written)) => {
            for c in &report.checks {
                println!(
                    "{} {:<28} value {:.6e} limit {:.6e}  {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.limit,
                    c.note
                );
            }
            for p in &written {
                println!("wrote {}", p.display());
            }
            println!(
                "{} in {:.2} s",
                if report.pass { "pass" } else { "fail" },
                report.wall_time_s
            );
            ExitCode::from(if report.pass { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
