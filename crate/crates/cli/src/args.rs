use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "ebnet",
    version,
    about = "Top-down attention maps for convolutional networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a model's layers, shapes and metadata.
    Inspect(InspectArgs),
    /// Write the attention map of one image for a class or a spatial signal.
    Attend(AttendArgs),
    /// Cross-check the layer-wise sweep against the Markov-chain oracle.
    OracleCheck(OracleArgs),
    /// Pointing-game accuracy over a dataset manifest.
    PointGame(PointGameArgs),
    /// Threshold-box localization error over an alpha sweep.
    Locate(LocateArgs),
    /// Rank segment proposals by attention and report recall@k.
    ScoreProposals(ProposalArgs),
    /// Write synthetic models and datasets.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AttendArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Class index or label, or a weighted list such as `3:0.7,5:0.3`.
    #[arg(long)]
    pub class: Option<String>,
    /// Spatial prior (EBMAP or PGM) over the output grid of the single
    /// class given with --class.
    #[arg(long)]
    pub signal_map: Option<PathBuf>,
    /// Layer to read the map from; defaults to the model's attention layer.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub contrastive: bool,
    /// Shift added to activations before they weight the selection.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Resize flexible-input models so the shorter image side has this length.
    #[arg(long)]
    pub short_side: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input image; a seeded random input is used when absent.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Bottom layer of the chain; defaults to the attention layer.
    #[arg(long)]
    pub layer: Option<String>,
    /// Number of random top-down signals.
    #[arg(long, default_value_t = 5)]
    pub signals: usize,
    /// Random walks for the sampling check; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long)]
    pub short_side: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PointGameArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Tolerance around annotated regions, in image pixels.
    #[arg(long, default_value_t = 15)]
    pub margin: usize,
    #[arg(long)]
    pub short_side: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LocateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Needed unless every manifest entry carries a precomputed `map`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub contrastive: bool,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Single threshold factor; sweeps 0, 0.5, …, 10 when absent.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub short_side: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ProposalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Proposal file, one line per manifest entry in the same order.
    #[arg(long)]
    pub proposals: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub contrastive: bool,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Area exponent; sweeps 0, 0.25, …, 1 when absent.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    pub nms: f64,
    #[arg(long)]
    pub short_side: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Small random conv net, within the oracle's size limit.
    Toy,
    /// Three-class colored-square detector with a labelled image set.
    Detector,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Images in the detector dataset.
    #[arg(long, default_value_t = 20)]
    pub images: usize,
}
