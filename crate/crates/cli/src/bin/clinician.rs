//! Clinician client: upload records, run similarity queries.

use std::path::PathBuf;
use std::process::ExitCode;

use cdss_core::client::{parse_record_file, ClientError, Clinician};
use cdss_core::config::Config;
use cdss_core::query::{encode_genotype, parse_genotype, render_csv, render_table};
use clap::{Args as ClapArgs, Parser, Subcommand};

#[derive(Parser)]
#[command(about = "Share patient records and query the two computing parties")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Upload a `genotype,treatment_id,ttf_days` CSV file.
    Ingest {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Rank treatments by average TTF among similar patients.
    Query(QueryArgs),
}

#[derive(ClapArgs)]
struct QueryArgs {
    #[command(flatten)]
    genotype: GenotypeArg,
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    config: PathBuf,
}

#[derive(ClapArgs)]
#[group(required = true, multiple = false)]
struct GenotypeArg {
    /// Genotype as a 0/1 string of length n_bits.
    #[arg(long)]
    genotype: Option<String>,
    /// Comma-separated mutation positions, 0-based.
    #[arg(long, value_delimiter = ',')]
    mutations: Option<Vec<usize>>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn client_fail(e: ClientError) -> ExitCode {
    fail(e.exit_code() as u8, e)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config_path = match &cli.cmd {
        Cmd::Ingest { config, .. } => config,
        Cmd::Query(q) => &q.config,
    };
    let config = match Config::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(2, e),
    };
    let (n, t) = (config.n_bits as usize, config.n_treatments as u32);
    let client = match Clinician::new(config) {
        Ok(c) => c,
        Err(e) => return client_fail(e),
    };
    match cli.cmd {
        Cmd::Ingest { file, .. } => {
            let text = match std::fs::read_to_string(&file) {
                Ok(t) => t,
                Err(e) => return fail(2, format!("{}: {e}", file.display())),
            };
            let records = match parse_record_file(&text, n, t) {
                Ok(r) => r,
                Err(e) => return fail(2, e),
            };
            match client.ingest(&records) {
                Ok(total) => {
                    println!("uploaded {} records; both parties now hold {total}", records.len());
                    ExitCode::SUCCESS
                }
                Err(e) => client_fail(e),
            }
        }
        Cmd::Query(q) => {
            let genotype = match (&q.genotype.genotype, &q.genotype.mutations) {
                (Some(g), _) => parse_genotype(g),
                (None, Some(m)) => encode_genotype(m, n),
                (None, None) => unreachable!("clap requires one genotype flag"),
            };
            let genotype = match genotype {
                Ok(g) => g,
                Err(e) => return fail(2, e),
            };
            match client.query(&genotype) {
                Ok(result) => {
                    if q.csv {
                        print!("{}", render_csv(&result));
                    } else {
                        print!("{}", render_table(&result));
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => client_fail(e),
            }
        }
    }
}
