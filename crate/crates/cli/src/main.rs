mod args;
mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use stull_core::persist::PointFormat;
use stull_core::{SpatialRect, TimeRange};

#[derive(Parser)]
#[command(name = "stull", version, about = "Build, sample and benchmark spatiotemporal point indexes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Clustered,
    Scattered,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Ndjson,
}

impl From<Format> for PointFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => PointFormat::Csv,
            Format::Ndjson => PointFormat::Ndjson,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    Stull,
    Randompath,
    Fixedbuffer,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Stull => "stull",
            Sampler::Randompath => "randompath",
            Sampler::Fixedbuffer => "fixedbuffer",
        }
    }
}

#[derive(clap::Args)]
pub struct QueryArgs {
    /// Query rectangle `min_x,min_y,max_x,max_y`; defaults to the index extent.
    #[arg(long, value_parser = args::parse_rect)]
    pub rect: Option<SpatialRect>,
    /// Query time range `start,end` (end exclusive); defaults to all time.
    #[arg(long, value_parser = args::parse_time)]
    pub time: Option<TimeRange>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic point file.
    Generate {
        #[arg(long, value_enum, default_value = "clustered")]
        mode: Mode,
        #[arg(long)]
        count: usize,
        #[arg(long, value_parser = args::parse_rect, default_value = "0,0,1,1")]
        extent: SpatialRect,
        #[arg(long, default_value_t = 0)]
        time_start: i64,
        /// Seconds covered by the generated timestamps.
        #[arg(long, default_value_t = 30 * 86_400)]
        time_span: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; `.ndjson`/`.jsonl` selects NDJSON, anything else CSV.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build an index from a point file.
    Build {
        /// JSON config holding the index layout and build seed.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Insert points into a saved index.
    Insert {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the updated index; defaults to overwriting `--index`.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Load an index and verify its structural invariants.
    Check {
        #[arg(long)]
        index: PathBuf,
    },
    /// Run one progressive session and report each update.
    Sample {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, short = 'u', default_value_t = 5)]
        updates_per_level: u32,
        #[arg(long, value_enum, default_value = "stull")]
        sampler: Sampler,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop after this many updates.
        #[arg(long)]
        updates: Option<u32>,
        /// Write the delivered points to this file.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Accuracy of every sampler against the exact result, by stage.
    Eval {
        #[arg(long)]
        index: PathBuf,
        /// Config file supplying evaluation defaults (grid, bandwidth, mask).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, short = 'u', default_value_t = 5)]
        updates_per_level: u32,
        /// Fractions of the session at which to measure.
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.2,0.5,1")]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "stull,randompath,fixedbuffer")]
        samplers: Vec<Sampler>,
        /// Dataset label written to every row.
        #[arg(long, default_value = "dataset")]
        label: String,
        /// CSV output; stdout if omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Per-update latency for each sampler and budget.
    Bench {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, short = 'u', value_delimiter = ',', default_value = "5,10,20,40")]
        updates_per_level: Vec<u32>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "stull,randompath,fixedbuffer")]
        samplers: Vec<Sampler>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "dataset")]
        label: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Idle seconds before a session is reclaimed.
        #[arg(long, default_value_t = 600)]
        session_ttl: u64,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    use commands::*;
    match Cli::parse().command {
        Command::Generate { mode, count, extent, time_start, time_span, seed, out } => {
            generate(mode, count, extent, time_start, time_span, seed, &out)
        }
        Command::Build { config, input, format, out } => build(&config, &input, format, &out),
        Command::Insert { index, input, format, seed, out } => insert(&index, &input, format, seed, out.as_deref()),
        Command::Check { index } => check(&index),
        Command::Sample { index, query, updates_per_level, sampler, seed, updates, out } => {
            sample(&index, &query, updates_per_level, sampler, seed, updates, out.as_deref())
        }
        Command::Eval { index, config, query, updates_per_level, fractions, seeds, samplers, label, csv, summary } => {
            let opts = EvalOptions { updates_per_level, fractions, seeds, samplers, label };
            eval(&index, config.as_deref(), &query, &opts, csv.as_deref(), summary.as_deref())
        }
        Command::Bench { index, config, query, updates_per_level, samplers, seed, label, csv, summary } => {
            bench(&index, config.as_deref(), &query, &updates_per_level, &samplers, seed, &label, csv.as_deref(), summary.as_deref())
        }
        Command::Serve { addr, session_ttl } => {
            let config = stull_service::ServiceConfig {
                session_ttl: std::time::Duration::from_secs(session_ttl),
                ..Default::default()
            };
            tokio::runtime::Runtime::new()?.block_on(stull_service::serve(addr, config))?;
            Ok(())
        }
    }
}
