use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "anchordiff",
    version,
    about = "Confidence-based decoding for masked diffusion LMs with suffix anchors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode one or more responses and write their traces.
    Decode(DecodeArgs),
    /// Run a kappa/beta/gamma grid and print one summary row per cell.
    Sweep(SweepArgs),
    /// Report EOT ratio and early-decoding histograms for trace files.
    Stats(StatsArgs),
}

/// Run settings shared by `decode` and `sweep`. Every flag overrides the
/// same-named key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run-config file; keys mirror the long flag names with underscores.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `synthetic:<model.json>`, `remote:<host:port>` or `table:<table.jsonl>`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Step budget T (default: length / 2).
    #[arg(long)]
    pub steps: Option<usize>,
    /// top-prob, top-margin or random.
    #[arg(long)]
    pub strategy: Option<String>,
    /// JSON file with `tokens`, optional `offset_from_end` and `display`.
    #[arg(long)]
    pub anchor_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub anchor_tokens: Option<Vec<u32>>,
    /// Slots between the anchor's last token and the end of the response.
    #[arg(long)]
    pub anchor_offset: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Disable anchor-proximity modulation.
    #[arg(long)]
    pub no_modulation: bool,
    /// Use the constant factor (1 - w) instead of the progress-dependent one.
    #[arg(long)]
    pub no_progress_dependence: bool,
    #[arg(long)]
    pub eot_suppression: bool,
    /// With suppression, never decode EOT at a suppressed position.
    #[arg(long)]
    pub eot_hard_ban: bool,
    /// Decode semi-autoregressively in blocks of this size.
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of runs with seeds seed, seed+1, ...
    #[arg(long)]
    pub repeat: Option<usize>,
    /// Explicit seed list; overrides --seed/--repeat.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// lowest-index or seeded.
    #[arg(long)]
    pub tie_break: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub prompt: Option<Vec<u32>>,
    /// Vocabulary size for remote and table backends.
    #[arg(long)]
    pub vocab_size: Option<u32>,
    #[arg(long)]
    pub mask_id: Option<u32>,
    #[arg(long)]
    pub eot_id: Option<u32>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Trace output; with several seeds, `.seed<N>` is inserted before the extension.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Re-run the configuration stored in a trace header.
    #[arg(long, conflicts_with = "config")]
    pub from_trace: Option<PathBuf>,
    /// Record every denoiser answer into a replayable prediction table.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Grid file `{"kappa": [...], "beta": [...], "gamma": [...]}`; defaults to the built-in preset.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// CSV output (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.15)]
    pub early_fraction: f64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Paired report for exactly two traces (deltas are second minus first).
    #[arg(long)]
    pub compare: bool,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.15)]
    pub early_fraction: f64,
    /// Write the (averaged) histogram as CSV.
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
}
