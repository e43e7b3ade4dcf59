//! Computing-party daemon.

use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use cdss_core::config::Config;
use cdss_core::service::{serve, PartyOptions};
use cdss_core::sharing::PartyId;
use clap::Parser;

// large per-query buffers are reused instead of being mapped and faulted in again every query
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(about = "Run one of the two computing parties")]
struct Args {
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    id: u8,
    #[arg(long)]
    config: PathBuf,
    /// Address for clients (and, on party 0, for the peer party).
    #[arg(long)]
    listen: String,
    /// Party 0's address; party 1 dials it, party 0 ignores it.
    #[arg(long)]
    peer: String,
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    preproc: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    let listener = match TcpListener::bind(&args.listen) {
        Ok(l) => l,
        Err(e) => {
            log::error!("cannot listen on {}: {e}", args.listen);
            return ExitCode::from(3);
        }
    };
    let opts = PartyOptions {
        id: PartyId::new(args.id).expect("range checked by clap"),
        config,
        listener,
        peer: args.peer,
        db_path: args.db,
        preproc_path: args.preproc,
    };
    match serve(opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(1)
        }
    }
}
