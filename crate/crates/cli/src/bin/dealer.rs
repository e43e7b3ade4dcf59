//! Trusted dealer: writes both parties' preprocessing stores and the client mask file.

use std::path::PathBuf;
use std::process::ExitCode;

use cdss_core::config::Config;
use cdss_core::preproc::{deal_to_dir, Counts};
use clap::Parser;
use rand::rngs::OsRng;

#[derive(Parser)]
#[command(about = "Deal preprocessing material for both computing parties")]
struct Args {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    triples: u64,
    #[arg(long)]
    bits: u64,
    /// Input masks for authenticated-mode clients.
    #[arg(long, default_value_t = 0)]
    masks: u64,
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let counts = Counts::new(args.triples, args.bits, args.masks);
    match deal_to_dir(&args.out_dir, &cfg.protocol(), counts, &mut OsRng) {
        Ok(sid) => {
            let hex: String = sid.iter().map(|b| format!("{b:02x}")).collect();
            log::info!(
                "dealt {} triples, {} bits, {} masks into {} (session {hex})",
                counts.triples,
                counts.bits,
                counts.masks,
                args.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
