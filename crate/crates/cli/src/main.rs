//! `hardy-factor`: batch runner for the factorization experiments.
//!
//! Every subcommand reads an optional JSON config, writes deterministic JSON
//! and CSV reports into `--out`, and records timings in `metadata.json`.

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::Run;
use failure::Failure;
use output::Output;

#[derive(Parser)]
#[command(name = "hardy-factor", version, about = "Finite-dimensional factorization through bi-parameter Hardy spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config for the subcommand; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Top-level seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, default_value = "hardy-factor-out")]
    out: PathBuf,

    /// Also write (x, y) series files.
    #[arg(long, global = true)]
    plot_data: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Mixed norm and dual-norm lower bound of an element.
    Norm,
    /// Jones and Capon condition reports for a pair of families.
    CheckCollections,
    /// Emit the Gamlen–Gaudet families.
    GamlenGaudet,
    /// Exhaustive and sampled moments of the randomized block entries.
    Moments,
    /// Search for almost-diagonalizing sign assignments.
    SearchSigns,
    /// Build and verify a factorization bundle.
    Factorize,
    /// Table of the dimension constants over a parameter grid.
    DimFormula,
    /// Summarize an existing bundle.
    Report {
        /// Bundle directory or JSON file; overrides the config.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Norm => "norm",
            Command::CheckCollections => "check-collections",
            Command::GamlenGaudet => "gamlen-gaudet",
            Command::Moments => "moments",
            Command::SearchSigns => "search-signs",
            Command::Factorize => "factorize",
            Command::DimFormula => "dim-formula",
            Command::Report { .. } => "report",
        }
    }
}

fn report_failure(f: &Failure) -> ExitCode {
    eprintln!("{}", serde_json::to_string(f).expect("failure serializes"));
    ExitCode::from(f.exit_code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_failure(&Failure::config(e.to_string())),
    };

    if let Some(k) = cli.threads {
        if k == 0 {
            return report_failure(&Failure::config("--threads must be positive"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            return report_failure(&Failure::config(e.to_string()));
        }
    }

    let mut out = match Output::create(&cli.out, cli.plot_data) {
        Ok(o) => o,
        Err(f) => return report_failure(&f),
    };
    let started = Instant::now();
    let run = Run { config: cli.config.as_deref(), seed: cli.seed, out: &mut out };
    let result = match &cli.command {
        Command::Norm => commands::norm(run),
        Command::CheckCollections => commands::check_collections(run),
        Command::GamlenGaudet => commands::gamlen_gaudet_families(run),
        Command::Moments => commands::moments(run),
        Command::SearchSigns => commands::search(run),
        Command::Factorize => commands::factorize_cmd(run),
        Command::DimFormula => commands::dim_formula(run),
        Command::Report { bundle } => commands::report(run, bundle.as_deref()),
    };

    let (seed, code) = match &result {
        Ok(s) => (Some(*s), 0),
        Err(f) => (cli.seed, f.exit_code),
    };
    let metadata = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "threads": cli.threads.unwrap_or_else(rayon::current_num_threads),
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "exit_code": code,
        "outputs": out.written(),
    });
    if let Err(f) = out.json("metadata.json", &metadata) {
        return report_failure(&f);
    }
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(f) => report_failure(&f),
    }
}
