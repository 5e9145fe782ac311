use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spme::cli::{run, Overrides, RunManifest, SUITES};

/// Run verification suites for a stochastic porous-medium configuration.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Sectioned key = value problem file.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated suite names.
    #[arg(long, value_delimiter = ',', required = true)]
    suites: Vec<String>,
    /// Output directory for reports and provenance.
    #[arg(long, default_value = "spme-out")]
    out: PathBuf,
    /// Replaces the seed of the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound on Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Upper bound on cells per axis.
    #[arg(long)]
    cells: Option<usize>,
    /// Also write <suite>_plot.csv.
    #[arg(long)]
    plot_data: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let manifest = RunManifest {
        config: args.config,
        suites: args.suites.into_iter().filter(|s| !s.is_empty()).collect(),
        out: args.out,
        overrides: Overrides { seed: args.seed, max_paths: args.paths, max_cells: args.cells },
        plot_data: args.plot_data,
    };
    match run(&manifest) {
        Ok(outcome) => {
            for s in &outcome.summaries {
                println!("{s}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("spme: {e}");
            if manifest.suites.is_empty() {
                eprintln!("suites: {}", SUITES.join(", "));
            }
            ExitCode::from(2)
        }
    }
}
