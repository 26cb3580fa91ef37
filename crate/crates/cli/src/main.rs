//! `vrag`: synthesise corpora, train, embed, segment, query and evaluate.
//!
//! Exit codes: 0 on success, 2 for usage errors, 1 for runtime failures.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vrag", version, about = "Region attention graph video retrieval")]
#[command(args_override_self = true)]
struct Cli {
    /// Read extra `key=value` flags from a file; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for embedding and ranking (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus of RMF1 files with a manifest and qrels.
    Synth(SynthArgs),
    /// Train a model with triplet-margin loss and write a checkpoint.
    Train(TrainArgs),
    /// Write one video-level embedding per input video.
    Embed(EmbedArgs),
    /// Split videos into shots and write one embedding per shot.
    Segment(SegmentArgs),
    /// Rank an embedding index for every query and write rankings.
    Query(QueryArgs),
    /// Rank and report mean average precision against relevance judgments.
    Eval(EvalArgs),
    /// Run the built-in invariant suite.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CorpusKind {
    /// Groups of partial copies; every video is a query (leave-one-out).
    Copies,
    /// Single-scene queries against three-scene database videos.
    Scenes,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = CorpusKind::Copies)]
    kind: CorpusKind,
    /// Number of groups (scenes).
    #[arg(long, default_value_t = 8, value_parser = config::positive)]
    groups: usize,
    /// Videos per group (copies) or positives per group (scenes).
    #[arg(long, default_value_t = 4, value_parser = config::positive)]
    per_group: usize,
    #[arg(long, default_value_t = 20, value_parser = config::positive)]
    min_frames: usize,
    #[arg(long, default_value_t = 60, value_parser = config::positive)]
    max_frames: usize,
    /// Regions per frame.
    #[arg(long, default_value_t = 4, value_parser = config::positive)]
    regions: usize,
    /// Descriptor channels.
    #[arg(long, default_value_t = 32, value_parser = config::positive)]
    channels: usize,
    /// Standard deviation of per-element Gaussian noise.
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true, value_parser = config::non_negative)]
    noise: f64,
    /// Probability of dropping each frame of a copy.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true, value_parser = config::probability)]
    drop_prob: f64,
    /// Standard deviation of a per-video offset on the first --nuisance-dims
    /// channels (copies only).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true, value_parser = config::non_negative)]
    nuisance_scale: f64,
    #[arg(long, default_value_t = 0)]
    nuisance_dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AggArg {
    Attention,
    Max,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConcatArg {
    All,
    Final,
    Layers,
    LayersReduced,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus directory (containing manifest.tsv) or manifest file.
    #[arg(long)]
    corpus: PathBuf,
    /// Output checkpoint, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV [default: OUT with extension .loss.csv].
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Continue from a checkpoint (its model configuration is used).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    /// Triplet margin m.
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true, value_parser = config::non_negative)]
    margin: f64,
    /// Adam learning rate (fixed).
    #[arg(long, default_value_t = 3e-7, allow_negative_numbers = true, value_parser = config::strictly_positive)]
    lr: f64,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true, value_parser = config::unit_interval)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999, allow_negative_numbers = true, value_parser = config::unit_interval)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8, allow_negative_numbers = true, value_parser = config::strictly_positive)]
    eps: f64,
    #[arg(long, default_value_t = 1000, value_parser = config::positive)]
    triplets_per_pool: usize,
    /// Triplet pools mined per epoch.
    #[arg(long, default_value_t = 2, value_parser = config::positive)]
    pools: usize,
    /// Maximum clip length W in frames (one frame per second).
    #[arg(long, default_value_t = 64, value_parser = config::positive)]
    clip_frames: usize,
    /// Reduced width C'.
    #[arg(long, default_value_t = 512, value_parser = config::positive)]
    hidden_dim: usize,
    /// Graph attention layers K.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Embedding size D.
    #[arg(long, default_value_t = 4096, value_parser = config::positive)]
    embed_dim: usize,
    /// Share the query transform as the key transform.
    #[arg(long)]
    tied: bool,
    #[arg(long, value_enum, default_value_t = AggArg::Attention)]
    region_agg: AggArg,
    #[arg(long, value_enum, default_value_t = AggArg::Attention)]
    pooling: AggArg,
    #[arg(long, value_enum, default_value_t = ConcatArg::All)]
    concat: ConcatArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Corpus directory (containing manifest.tsv) or manifest file.
    #[arg(long, conflicts_with = "features")]
    corpus: Option<PathBuf>,
    /// RMF1 files; the video id is the file stem.
    #[arg(required_unless_present = "corpus")]
    features: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Output EMB1 file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Shot boundary threshold on consecutive-frame cosine.
    #[arg(long, default_value_t = 0.75, allow_negative_numbers = true, value_parser = config::cosine)]
    tau: f64,
    /// Output EMB1 file (shot-level).
    #[arg(long)]
    out: PathBuf,
    /// Shot manifest `video_id, shot_idx, start, end` (1-based, inclusive).
    #[arg(long)]
    shots_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AggregationArg {
    /// Chamfer similarity.
    Cs,
    /// Symmetric Chamfer similarity.
    Scs,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// EMB1 file of query embeddings.
    #[arg(long)]
    queries: PathBuf,
    /// EMB1 file of database embeddings (same granularity).
    #[arg(long)]
    index: PathBuf,
    /// Shot similarity aggregation for shot-level files.
    #[arg(long, value_enum, default_value_t = AggregationArg::Cs)]
    aggregation: AggregationArg,
    /// Average query expansion depth (video-level only).
    #[arg(long, value_parser = config::positive)]
    qe: Option<usize>,
    /// Remove each query's own id from its ranking.
    #[arg(long)]
    exclude_self: bool,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    rank: RankArgs,
    /// Rankings TSV [default: standard output].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    rank: RankArgs,
    /// Relevance judgments `query, video, label[, group]`.
    #[arg(long)]
    qrels: PathBuf,
    /// Task definitions `name, label1,label2,...` [default: every label relevant].
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Evaluate one task from the task file [default: all of them].
    #[arg(long, requires = "tasks")]
    task: Option<String>,
    /// Also write the rankings TSV.
    #[arg(long)]
    rankings_out: Option<PathBuf>,
    /// Print AP for every query.
    #[arg(long)]
    per_query: bool,
}

#[derive(Debug, Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies every tolerance (testing hook; 0 forces failures).
    #[arg(long, default_value_t = 1.0, hide = true)]
    tolerance_scale: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match config::expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Embed(a) => commands::embed(a),
        Command::Segment(a) => commands::segment(a),
        Command::Query(a) => commands::query(a),
        Command::Eval(a) => commands::eval(a),
        Command::Selfcheck(a) => commands::selfcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
