//! Zero-shot anomaly scoring for 3D volumes from frozen 2D slice features.
//!
//! The pipeline turns per-slice encoder features into cubic patch tokens,
//! scores every token by how far it sits from its nearest neighbours in the
//! other volumes of an unlabeled batch, and upsamples the token scores into
//! voxel-level anomaly maps.
//!
//! ```text
//! slice features ──tokenizer──▶ tokens ──scorer──▶ token scores ──mapping──▶ voxel maps
//!                                                       │
//!                                                       └──▶ patient score (max)
//! ```
//!
//! [`synth`] provides a deterministic synthetic dataset and a mock encoder so
//! everything above runs without a neural network.

pub mod container;
pub mod mapping;
pub mod metrics;
pub mod model;
pub mod scorer;
pub mod synth;
pub mod tokenizer;

pub use container::{read_container, write_container, ContainerError, TensorContainer};
pub use mapping::{upsample_trilinear, AnomalyMap};
pub use model::{Axis, BrainMask, ExclusionPolicy, Label, ScoreConfig, SliceFeatureStack, TokenCollection, Volume, VolumeMeta};
pub use scorer::{score_batch, BatchScores, VolumeTokens};
pub use tokenizer::{build_projection, tokenize_volume, ProjectionMatrix};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/containers.md")]
    mod containers {}
    #[doc = include_str!("../../../book/src/tokenization.md")]
    mod tokenization {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/maps.md")]
    mod maps {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
