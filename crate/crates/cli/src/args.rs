use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use voxscore::ExclusionPolicy;

#[derive(Debug, Parser)]
#[command(name = "voxscore", version, about = "Zero-shot volumetric anomaly scoring")]
pub struct Cli {
    /// Worker threads for every parallel stage (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with mock slice features.
    Synth(SynthArgs),
    /// Turn slice features into fused 3D patch tokens.
    Tokenize(TokenizeArgs),
    /// Score a batch of token collections and write anomaly maps.
    Score(ScoreArgs),
    /// Compare anomaly maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Run synth or ingest, tokenize, score and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Volume edge in voxels.
    #[arg(long, default_value_t = 56)]
    pub size: usize,
    #[arg(long, default_value_t = 14)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 12)]
    pub n_normal: usize,
    #[arg(long, default_value_t = 6)]
    pub n_anomalous: usize,
    #[arg(long, default_value_t = 7.0)]
    pub lesion_radius_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lesion_radius_max: f64,
    #[arg(long, default_value_t = 0.6)]
    pub lesion_delta: f32,
    #[arg(long, default_value_t = 1)]
    pub texture_seed: u64,
    #[arg(long, default_value_t = 2)]
    pub encoder_seed: u64,
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.7)]
    pub spacing: f64,
    /// Layers to emit features for.
    #[arg(long, value_delimiter = ',', default_value = "6,12,18,24")]
    pub layers: Vec<u32>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub features_dir: PathBuf,
    #[arg(long)]
    pub masks_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 14)]
    pub patch_size: usize,
    /// Projected width per axis; fused tokens are three times this.
    #[arg(long, default_value_t = 128)]
    pub proj_dim: usize,
    /// Seed of the shared projection matrix.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "6,12,18,24")]
    pub layers: Vec<u32>,
    /// Keep a token when its cube's foreground fraction exceeds this.
    #[arg(long, default_value_t = 0.0)]
    pub mask_keep_threshold: f64,
    /// Re-normalize each projected view before fusion.
    #[arg(long)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub tokens_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Brain masks; when given, full-resolution maps are written too.
    #[arg(long)]
    pub masks_dir: Option<PathBuf>,
    /// Layers to score (default: every layer found).
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<u32>>,
    /// K as a fraction of the other volumes in a batch.
    #[arg(long, default_value_t = 0.3)]
    pub k_frac: f64,
    /// Score independent chunks of this many volumes (default: one batch).
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Shuffle volumes with this seed before chunking.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long, default_value_t = ExclusionPolicy::ConsistentAnomaly)]
    pub policy: ExclusionPolicy,
    /// Tile edge of the distance kernel.
    #[arg(long, default_value_t = 1024)]
    pub chunk_tokens: usize,
    #[arg(long, default_value_t = 0.05)]
    pub exclusion_top_fraction: f64,
    #[arg(long)]
    pub exclusion_links: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub exclusion_gap_ratio: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Directory with `{id}_map.vxtk` files and `scores.json`.
    #[arg(long)]
    pub maps_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long)]
    pub masks_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Metadata sidecars; labels default to "ground truth is non-empty".
    #[arg(long)]
    pub meta_dir: Option<PathBuf>,
    /// Intensity volumes used as overlay background.
    #[arg(long)]
    pub volumes_dir: Option<PathBuf>,
    /// Patient scores (default: `scores.json` in the maps directory).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Voxel spacing in mm (default: from metadata, else 0.7).
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub n_thresholds: usize,
    #[arg(long)]
    pub include_background: bool,
    /// Lesion detection threshold (default: the Dice-optimal threshold).
    #[arg(long)]
    pub ltpr_threshold: Option<f32>,
    /// Write one PNG overlay per volume.
    #[arg(long)]
    pub overlays: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    /// Key-value TOML config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<u32>>,
    #[arg(long)]
    pub proj_dim: Option<usize>,
    #[arg(long)]
    pub k_frac: Option<f64>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub chunk_tokens: Option<usize>,
    #[arg(long)]
    pub policy: Option<ExclusionPolicy>,
    #[arg(long)]
    pub overlays: bool,
}
