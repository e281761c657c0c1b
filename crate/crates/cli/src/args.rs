use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

const AFTER_HELP: &str = "\
Randomness: every random choice (first sampler pick, KID block draws, toy-lab
worlds and random baselines) comes from ChaCha8 (rand_chacha) seeded with a
64-bit value via `seed_from_u64`. The same seed gives the same output on every
platform and for every --threads value.

Exit codes: 0 success, 1 computation error, 2 usage, manifest or missing input.
Failures are reported on stderr as a JSON object unless --human-errors is set.";

#[derive(Debug, Parser)]
#[command(name = "cat-tool", version, about = "Class affinity transfer toolkit", after_help = AFTER_HELP)]
pub struct Cli {
    /// Seed for every random choice (ChaCha8).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    /// Report failures as plain text instead of JSON.
    #[arg(long, global = true)]
    pub human_errors: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Estimate or combine affinity matrices.
    #[command(subcommand)]
    Affinity(AffinityCommand),
    /// Re-express target label maps in the source label space.
    Apply(ApplyArgs),
    /// Pick a class-balanced subset of a label-map pool.
    Sample(SampleArgs),
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Synthetic transfer experiment.
    #[command(subcommand, name = "toy-lab")]
    ToyLab(ToyLabCommand),
    /// Write an affinity matrix as linear-layer weights (CATF).
    ExportWeights(ExportArgs),
}

/// Class sets, zero-row handling and output shared by the estimators.
#[derive(Debug, Args)]
pub struct EstimatorCommon {
    /// Pipeline manifest; explicit flags take precedence over its fields.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Source class-set manifest.
    #[arg(long)]
    pub src: Option<PathBuf>,
    /// Target class-set manifest.
    #[arg(long)]
    pub tgt: Option<PathBuf>,
    /// What to do with rows that sum to zero.
    #[arg(long, value_parser = ["uniform", "error", "keep-flagged"])]
    pub zero_rows: Option<String>,
    /// Binarize to one-hot rows after normalization.
    #[arg(long)]
    pub hard: bool,
    /// Output affinity JSON; defaults to `<output_dir>/<method>.json` from the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum AffinityCommand {
    /// Count target ground truth against source-segmenter predictions.
    Confusion {
        #[command(flatten)]
        common: EstimatorCommon,
        /// Directory of target ground-truth PGM maps.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Directory of source-class predictions on the same images.
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Cosine similarity of pixel-weighted patch-feature prototypes.
    Prototype {
        #[command(flatten)]
        common: EstimatorCommon,
        #[command(flatten)]
        inputs: PrototypeInputs,
    },
    /// Cosine similarity of class-name embeddings.
    Text {
        #[command(flatten)]
        common: EstimatorCommon,
        #[command(flatten)]
        inputs: TextInputs,
    },
    /// Majority vote over the three estimators.
    Combine(CombineArgs),
}

#[derive(Debug, Args)]
pub struct PrototypeInputs {
    /// Source CATP patch grids (one per image, named like the label maps).
    #[arg(long)]
    pub src_patches: Option<PathBuf>,
    #[arg(long)]
    pub src_labels: Option<PathBuf>,
    #[arg(long)]
    pub tgt_patches: Option<PathBuf>,
    #[arg(long)]
    pub tgt_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TextInputs {
    /// CATF embeddings of the source class names (item ids are class names).
    #[arg(long)]
    pub src_emb: Option<PathBuf>,
    #[arg(long)]
    pub tgt_emb: Option<PathBuf>,
    /// Use the built-in hashed-trigram embedder (for tests; not CLIP).
    #[arg(long)]
    pub test_embedder: bool,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[command(flatten)]
    pub common: EstimatorCommon,
    /// Confusion affinity file; estimated from the manifest inputs if omitted.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    #[arg(long)]
    pub prototype: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Training-free FID per method, e.g. `confusion=48.7,prototype=49.5,text=51.6`.
    #[arg(long, conflicts_with = "fallback_order")]
    pub fallback_fid: Option<String>,
    /// Explicit fallback preference, best first, e.g. `confusion,prototype,text`.
    #[arg(long)]
    pub fallback_order: Option<String>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[command(flatten)]
    pub prototype_inputs: PrototypeInputs,
    #[command(flatten)]
    pub text_inputs: TextInputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApplyMode {
    Soft,
    Hard,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub affinity: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Directory of target PGM label maps.
    #[arg(long)]
    pub maps: PathBuf,
    /// `hard` writes source-class PGM maps (soft matrices are binarized
    /// first); `soft` writes per-pixel source distributions as CATF.
    #[arg(long, value_enum, default_value_t = ApplyMode::Hard)]
    pub mode: ApplyMode,
    /// Output directory; file names mirror the inputs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Directory of PGM label maps to choose from.
    #[arg(long)]
    pub pool: PathBuf,
    /// Class-set manifest of the pool.
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = cat_core::sampling::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Minimize KL(p || uniform) instead of KL(uniform || p).
    #[arg(long)]
    pub reverse_kl: bool,
    /// Selection JSON; printed to stdout as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// Fréchet distance between Gaussian fits of two CATF feature files.
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unbiased block estimate of the polynomial-kernel MMD².
    Kid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        /// Rows per block; defaults to min(N_real, N_fake, 1000).
        #[arg(long)]
        block: Option<usize>,
        #[arg(long, default_value_t = cat_core::metrics::DEFAULT_BLOCKS)]
        blocks: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean intersection-over-union of predicted against ground-truth maps.
    Miou {
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_parser = ["present", "all"], default_value = "present")]
        scheme: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ToyLabCommand {
    /// Affinity-initialized versus randomly initialized finetuning.
    Run {
        /// JSON config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds or a half-open range `a..b`.
        #[arg(long, default_value = "0..20")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub affinity: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// `row_major_TxS` stores A as is; `col_major_SxT` stores its transpose.
    #[arg(long, default_value = "row_major_TxS")]
    pub layout: String,
    #[arg(long)]
    pub out: PathBuf,
}
