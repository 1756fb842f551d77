//! Command-line front end. Exit status: 0 on success, 1 for input, format
//! and parameter errors, 2 for numeric failures.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{debug, info};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::DEFAULT_RANK_TOLERANCE;
use crate::metrics::build_report;
use crate::reorganizer::{reorganize_story, IdSource, ReorganizerConfig};
use crate::story::SpanLayout;
use crate::synth::{synth_story, SynthParams};
use crate::tensor_io::{read_story, write_story, FORMAT_VERSION};

#[derive(Debug, Parser)]
#[command(name = "story-reorg", version, about = "Reorganize multi-frame prompt embeddings")]
pub struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decorrelate the frame parts of a story and write the result.
    Reorganize(ReorganizeArgs),
    /// Print a JSON summary of a story file.
    Inspect(InspectArgs),
    /// Write a seeded synthetic story.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ReorganizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Write an interference report (JSON) here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long = "rank-tol", default_value_t = DEFAULT_RANK_TOLERANCE)]
    pub rank_tolerance: f64,
    #[arg(long, value_enum, default_value_t = IdSource::FirstFrame)]
    pub id_source: IdSource,
    #[arg(long, default_value_t = 1.0)]
    pub interference_weight: f64,
}

impl ReorganizeArgs {
    pub fn config(&self) -> ReorganizerConfig {
        ReorganizerConfig {
            rank_tolerance: self.rank_tolerance,
            id_source: self.id_source,
            interference_weight: self.interference_weight,
        }
    }
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub tokens_per_frame: usize,
    #[arg(long, default_value_t = 4)]
    pub identity_tokens: usize,
    #[arg(long, default_value_t = 0.5)]
    pub shared_strength: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct FrameSummary {
    index: usize,
    tensor: String,
    rows: usize,
    layout: SpanLayout,
    untouched_rows: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct StorySummary {
    format_version: u32,
    frame_count: usize,
    embedding_dim: usize,
    identity_length: usize,
    frames: Vec<FrameSummary>,
    provenance: std::collections::BTreeMap<String, serde_json::Value>,
}

fn report(e: &Error) {
    eprintln!("error: {e}");
}

pub fn cmd_reorganize(args: &ReorganizeArgs) -> i32 {
    let config = args.config();
    if let Err(e) = config.validate() {
        report(&e);
        return 1;
    }
    match reorganize(args, &config) {
        Ok(()) => 0,
        Err(e) => {
            report(&e);
            e.exit_code()
        }
    }
}

fn reorganize(args: &ReorganizeArgs, config: &ReorganizerConfig) -> Result<()> {
    let story = read_story(&args.input)?;
    info!(
        "read {} frames (d = {}) from {}",
        story.frame_count(),
        story.embedding_dim(),
        args.input.display()
    );
    let out = reorganize_story(&story, config)?;
    write_story(&out, &args.output)?;
    if let Some(path) = &args.report {
        let report = build_report(&story, &out, config)?;
        debug!(
            "mean off-diagonal overlap {:.6} -> {:.6}",
            report.mean_offdiag_before, report.mean_offdiag_after
        );
        std::fs::write(path, report.to_json() + "\n")?;
    }
    Ok(())
}

pub fn cmd_inspect(args: &InspectArgs) -> i32 {
    let story = match read_story(&args.input) {
        Ok(s) => s,
        Err(e) => {
            report(&e);
            return 1;
        }
    };
    let summary = StorySummary {
        format_version: FORMAT_VERSION,
        frame_count: story.frame_count(),
        embedding_dim: story.embedding_dim(),
        identity_length: story.identity_length(),
        frames: story
            .frames()
            .iter()
            .map(|f| FrameSummary {
                index: f.frame_index,
                tensor: f.name.clone(),
                rows: f.rows(),
                layout: f.layout,
                untouched_rows: f.layout.untouched_rows(f.rows()),
            })
            .collect(),
        provenance: story.provenance().clone(),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    0
}

pub fn cmd_synth(args: &SynthArgs) -> i32 {
    let params = SynthParams {
        frames: args.frames,
        dim: args.dim,
        tokens_per_frame: args.tokens_per_frame,
        identity_tokens: args.identity_tokens,
        shared_strength: args.shared_strength,
        seed: args.seed,
    };
    match synth_story(&params).and_then(|s| write_story(&s, &args.output)) {
        Ok(()) => 0,
        Err(e) => {
            report(&e);
            1
        }
    }
}

/// Parses arguments and runs one subcommand, returning the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    match &cli.command {
        Command::Reorganize(a) => cmd_reorganize(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    }
}
