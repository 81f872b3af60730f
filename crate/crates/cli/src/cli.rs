use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use styleforge::curation::{DEFAULT_DEDUP_THRESHOLD, DEFAULT_FREQUENCY_CUTOFF};
use styleforge::features::synthetic::DEFAULT_IMAGE_SIDE;
use styleforge::training::{
    DEFAULT_BATCH_SIZE, DEFAULT_DIM_OUT, DEFAULT_ITERATIONS, DEFAULT_LAMBDA, DEFAULT_LR,
    DEFAULT_MOMENTUM, DEFAULT_TAU,
};

pub const THREADS_ENV: &str = "STYLEFORGE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "styleforge",
    version,
    about = "Style descriptor training, retrieval evaluation and style scoring"
)]
pub struct Cli {
    /// key=value file supplying defaults for subcommand flags; flags given
    /// on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads; 1 gives the deterministic single-thread baseline.
    #[arg(long, global = true, env = THREADS_ENV, value_name = "N")]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert JSON-lines vectors into an embedding file plus label sidecar.
    Ingest(IngestArgs),
    /// Match captions against a tag bank and drop overly frequent tags.
    Curate(CurateArgs),
    /// Merge near-duplicate embeddings into connected components.
    Dedup(DedupArgs),
    /// Compute handcrafted style descriptors from images or a synthetic corpus.
    ExtractFeatures(ExtractArgs),
    /// Train the projection head.
    Train(TrainArgs),
    /// Score retrieval over a database/query split.
    Eval(EvalArgs),
    /// Top-k neighbours of one vector, image or stored record.
    Query(QueryArgs),
    /// Per-label mean embeddings.
    Prototype(PrototypeArgs),
    /// Similarity of each embedding to each prototype.
    Gss(GssArgs),
    /// Group-level confusion of top-1 retrieval errors.
    Confusion(ConfusionArgs),
    /// Render a report, score table or confusion matrix as SVG plus CSV.
    Plot(PlotArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Curate(_) => "curate",
            Command::Dedup(_) => "dedup",
            Command::ExtractFeatures(_) => "extract-features",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Query(_) => "query",
            Command::Prototype(_) => "prototype",
            Command::Gss(_) => "gss",
            Command::Confusion(_) => "confusion",
            Command::Plot(_) => "plot",
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON lines of {"id", "vector", "labels"?}.
    #[arg(long, value_name = "FILE")]
    pub vectors: PathBuf,
    /// Embedding file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Label sidecar to write when any record carries labels.
    #[arg(long, value_name = "FILE")]
    pub labels_out: Option<PathBuf>,
    /// Vocabulary file to write alongside the sidecar.
    #[arg(long, value_name = "FILE")]
    pub vocab_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// JSON lines of {"id", "caption"}.
    #[arg(long, value_name = "FILE")]
    pub captions: PathBuf,
    /// Tag bank, one tag per line.
    #[arg(long, value_name = "FILE")]
    pub bank: PathBuf,
    /// Tags matched more often than this are dropped.
    #[arg(long, default_value_t = DEFAULT_FREQUENCY_CUTOFF)]
    pub cutoff: u64,
    /// Label sidecar to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Tag-count CSV to write.
    #[arg(long, value_name = "FILE")]
    pub counts: PathBuf,
    /// Retained vocabulary to write.
    #[arg(long, value_name = "FILE")]
    pub vocab_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct DedupArgs {
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// Records more similar than this (strictly) are merged.
    #[arg(long, default_value_t = DEFAULT_DEDUP_THRESHOLD)]
    pub threshold: f64,
    /// Cluster JSON to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Deduplicated embedding file to write.
    #[arg(long, value_name = "FILE")]
    pub embeddings_out: Option<PathBuf>,
    /// Merged label sidecar to write.
    #[arg(long, value_name = "FILE")]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of PNG/PPM images; ids are file stems.
    #[arg(
        long,
        value_name = "DIR",
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    pub images: Option<PathBuf>,
    /// Generate N images for each of K style classes from SEED.
    #[arg(long, num_args = 3, value_names = ["K", "N", "SEED"])]
    pub synthetic: Option<Vec<u64>>,
    /// Side length of synthetic images.
    #[arg(long, default_value_t = DEFAULT_IMAGE_SIDE)]
    pub side: usize,
    /// Embedding file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Label sidecar for synthetic classes.
    #[arg(long, value_name = "FILE")]
    pub labels_out: Option<PathBuf>,
    /// Vocabulary of synthetic classes.
    #[arg(long, value_name = "FILE")]
    pub vocab_out: Option<PathBuf>,
    /// Split JSON: the first two thirds of each synthetic class form the database.
    #[arg(long, value_name = "FILE")]
    pub split_out: Option<PathBuf>,
    /// Directory to write the synthetic images into (PNG).
    #[arg(long, value_name = "DIR")]
    pub images_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Uniform,
    Identity,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    /// Precomputed features; SSL views are then the features themselves.
    #[arg(
        long,
        value_name = "FILE",
        conflicts_with = "images",
        required_unless_present = "images"
    )]
    pub embeddings: Option<PathBuf>,
    /// Image directory; SSL views come from augmentations.
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Label sidecar (not needed with --ssl-only).
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// Restrict training to the database ids of this split.
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Weight of the SSL term.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Train on the SSL term alone.
    #[arg(long)]
    pub ssl_only: bool,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_MOMENTUM)]
    pub momentum: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_DIM_OUT)]
    pub dim_out: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Uniform)]
    pub init: InitArg,
    /// Learn a bias vector (stored in head format version 2).
    #[arg(long)]
    pub bias: bool,
    /// Head file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Loss trace CSV [default: <out>.trace.csv].
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApModeArg {
    /// Mean of P@r over every rank r ≤ k.
    AllRanks,
    /// Mean of P@r over the relevant ranks r ≤ k.
    RelevantRanks,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub split: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub head: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ApModeArg::AllRanks)]
    pub ap_mode: ApModeArg,
    /// Report JSON to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Metric CSV [default: <out> with .csv extension].
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Database embeddings.
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    /// Search only the database ids of this split.
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub head: Option<PathBuf>,
    /// Comma-separated query vector in the input feature space.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        group = "source"
    )]
    pub vector: Option<Vec<f64>>,
    /// Query image (PNG/PPM).
    #[arg(long, value_name = "FILE", group = "source")]
    pub image: Option<PathBuf>,
    /// Id of a record in the embedding file.
    #[arg(long, group = "source")]
    pub id: Option<String>,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    /// Neighbour table CSV to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrototypeArgs {
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub head: Option<PathBuf>,
    /// Prototype file to write (one record per label, id = tag).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GssArgs {
    #[arg(long, value_name = "FILE")]
    pub prototypes: PathBuf,
    #[arg(
        long,
        value_name = "FILE",
        conflicts_with = "images",
        required_unless_present = "images"
    )]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub head: Option<PathBuf>,
    /// Score CSV to write (id, label, score, band).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfusionArgs {
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
    /// JSON object mapping fine labels to groups.
    #[arg(long, value_name = "FILE")]
    pub groups: PathBuf,
    /// Label sidecar of the evaluated records.
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    /// Matrix CSV to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["report", "gss", "confusion"]))]
pub struct PlotArgs {
    /// Report JSON: mAP@k and Recall@k against k.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Score CSV: scores in row order, or against --against.
    #[arg(long, value_name = "FILE")]
    pub gss: Option<PathBuf>,
    /// Second score CSV, joined on (id, label), for the y axis.
    #[arg(long, value_name = "FILE", requires = "gss")]
    pub against: Option<PathBuf>,
    /// Confusion CSV: heatmap.
    #[arg(long, value_name = "FILE")]
    pub confusion: Option<PathBuf>,
    /// SVG to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Plotted values [default: <out> with .csv extension].
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}
