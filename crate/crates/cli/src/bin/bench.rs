//! Scaling sweep: online query time over growing synthetic databases.

use std::path::PathBuf;
use std::process::ExitCode;

use cdss_core::bench::run_sweep;
use cdss_core::config::Config;
use clap::Parser;

// large per-query buffers are reused instead of being mapped and faulted in again every query
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(about = "Time oracle-checked queries over synthetic databases")]
struct Args {
    #[arg(long, value_delimiter = ',', default_value = "100,500,1000,2000,5000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = run_sweep(&config, &args.sizes, args.reps, args.seed, |r| {
        log::info!(
            "D={} rep={} {:.1} ms, {} triples, {} bytes",
            r.db_size,
            r.rep,
            r.wall_millis,
            r.triples,
            r.bytes
        )
    });
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = std::fs::write(&args.out, report.csv()) {
        eprintln!("error: {}: {e}", args.out.display());
        return ExitCode::from(1);
    }
    println!("{}", report.fit_report());
    ExitCode::SUCCESS
}
