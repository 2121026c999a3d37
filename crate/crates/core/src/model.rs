//! Shared domain types and the file naming convention.
//!
//! Every grid here is stored row-major with the last listed axis fastest, so a
//! `[N, N, N, C]` tensor keeps voxel `(x, y, z)` at `((x * N + y) * N + z) * C`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{ContainerError, TensorContainer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("{0} contains NaN or infinite values")]
    NonFinite(&'static str),
    #[error("mask values must be 0 or 1, found {0}")]
    NonBinary(u8),
    #[error("unknown axis {0:?}")]
    UnknownAxis(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("metadata sidecar: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Slicing direction of a 2D view. Axial slices are taken along `x`, coronal
/// along `y`, sagittal along `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Axial,
    Coronal,
    Sagittal,
}

impl Axis {
    /// Fusion order.
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "axial" => Ok(Axis::Axial),
            "coronal" => Ok(Axis::Coronal),
            "sagittal" => Ok(Axis::Sagittal),
            other => Err(ModelError::UnknownAxis(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
    #[default]
    Unknown,
}

/// Per-volume metadata, serialized as the `{volume_id}.meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub volume_id: String,
    /// Voxels per cube edge.
    pub size: usize,
    #[serde(default = "default_spacing")]
    pub voxel_spacing_mm: f64,
    #[serde(default)]
    pub label: Label,
}

pub const DEFAULT_SPACING_MM: f64 = 0.7;

fn default_spacing() -> f64 {
    DEFAULT_SPACING_MM
}

impl VolumeMeta {
    pub fn validate(&self, patch: usize) -> Result<(), ModelError> {
        if patch == 0 || self.size == 0 || !self.size.is_multiple_of(patch) {
            return Err(ModelError::Shape(format!(
                "volume {} edge {} is not a multiple of patch size {patch}",
                self.volume_id, self.size
            )));
        }
        if !(self.voxel_spacing_mm > 0.0) {
            return Err(ModelError::Shape(format!(
                "volume {} has non-positive spacing {}",
                self.volume_id, self.voxel_spacing_mm
            )));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

#[inline]
pub(crate) fn idx3(n: usize, x: usize, y: usize, z: usize) -> usize {
    (x * n + y) * n + z
}

/// Dense cubic scalar field, e.g. an intensity volume or a full-resolution map.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size * size],
        }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[idx3(self.size, x, y, z)]
    }

    pub fn to_container(&self) -> TensorContainer {
        TensorContainer::from_f32(&[self.size; 3], self.data.clone()).expect("volume shape")
    }

    pub fn from_container(t: TensorContainer) -> Result<Self, ModelError> {
        let (dims, data) = t.into_f32(&[None, None, None])?;
        if dims[0] != dims[1] || dims[1] != dims[2] {
            return Err(ModelError::Shape(format!("volume is not cubic: {dims:?}")));
        }
        Ok(Self { size: dims[0], data })
    }
}

/// Binary foreground mask over an `H³` volume. Also used for lesion ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainMask {
    pub size: usize,
    pub data: Vec<u8>,
}

impl BrainMask {
    pub fn new(size: usize, data: Vec<u8>) -> Result<Self, ModelError> {
        if data.len() != size * size * size {
            return Err(ModelError::Shape(format!(
                "mask of edge {size} needs {} voxels, got {}",
                size * size * size,
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(ModelError::NonBinary(bad));
        }
        Ok(Self { size, data })
    }

    pub fn filled(size: usize, value: bool) -> Self {
        Self {
            size,
            data: vec![value as u8; size * size * size],
        }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[idx3(self.size, x, y, z)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_container(&self) -> TensorContainer {
        TensorContainer::from_u8(&[self.size; 3], self.data.clone()).expect("mask shape")
    }

    pub fn from_container(t: TensorContainer) -> Result<Self, ModelError> {
        let (dims, data) = t.into_u8(&[None, None, None])?;
        if dims[0] != dims[1] || dims[1] != dims[2] {
            return Err(ModelError::Shape(format!("mask is not cubic: {dims:?}")));
        }
        Self::new(dims[0], data)
    }
}

/// Encoder features for every slice of one volume along one axis, laid out
/// `[H, N_p, N_p, D]` and indexed `(h, u, v, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFeatureStack {
    pub volume_id: String,
    pub axis: Axis,
    pub layer: u32,
    pub size: usize,
    pub grid: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl SliceFeatureStack {
    pub fn new(
        volume_id: impl Into<String>,
        axis: Axis,
        layer: u32,
        size: usize,
        grid: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self, ModelError> {
        if size == 0 || grid == 0 || dim == 0 {
            return Err(ModelError::Shape("feature stack extents must be positive".into()));
        }
        if data.len() != size * grid * grid * dim {
            return Err(ModelError::Shape(format!(
                "feature stack [{size}, {grid}, {grid}, {dim}] needs {} values, got {}",
                size * grid * grid * dim,
                data.len()
            )));
        }
        Ok(Self {
            volume_id: volume_id.into(),
            axis,
            layer,
            size,
            grid,
            dim,
            data,
        })
    }

    pub fn feature(&self, h: usize, u: usize, v: usize) -> &[f32] {
        let off = ((h * self.grid + u) * self.grid + v) * self.dim;
        &self.data[off..off + self.dim]
    }

    pub fn to_container(&self) -> TensorContainer {
        TensorContainer::from_f32(&[self.size, self.grid, self.grid, self.dim], self.data.clone())
            .expect("stack shape")
    }

    pub fn from_container(
        t: TensorContainer,
        volume_id: impl Into<String>,
        axis: Axis,
        layer: u32,
    ) -> Result<Self, ModelError> {
        let (dims, data) = t.into_f32(&[None, None, None, None])?;
        if dims[1] != dims[2] {
            return Err(ModelError::Shape(format!(
                "feature stack in-slice grid is not square: {dims:?}"
            )));
        }
        Self::new(volume_id, axis, layer, dims[0], dims[1], dims[3], data)
    }
}

/// Fused 3D patch tokens of one volume for one layer: `[N_p, N_p, N_p, dim]`
/// tokens plus a `[N_p, N_p, N_p]` keep grid (1 = foreground).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenCollection {
    pub volume_id: String,
    pub layer: u32,
    pub grid: usize,
    pub dim: usize,
    pub tokens: Vec<f32>,
    pub keep: Vec<u8>,
}

impl TokenCollection {
    pub fn new(
        volume_id: impl Into<String>,
        layer: u32,
        grid: usize,
        dim: usize,
        tokens: Vec<f32>,
        keep: Vec<u8>,
    ) -> Result<Self, ModelError> {
        let n = grid * grid * grid;
        if grid == 0 || dim == 0 {
            return Err(ModelError::Shape("token grid and dim must be positive".into()));
        }
        if tokens.len() != n * dim || keep.len() != n {
            return Err(ModelError::Shape(format!(
                "token collection [{grid}³, {dim}] got {} token values and {} keep flags",
                tokens.len(),
                keep.len()
            )));
        }
        if let Some(&bad) = keep.iter().find(|&&v| v > 1) {
            return Err(ModelError::NonBinary(bad));
        }
        let out = Self {
            volume_id: volume_id.into(),
            layer,
            grid,
            dim,
            tokens,
            keep,
        };
        if out
            .kept_indices()
            .any(|i| out.token(i).iter().any(|v| !v.is_finite()))
        {
            return Err(ModelError::NonFinite("kept token"));
        }
        Ok(out)
    }

    /// `N = N_p³`.
    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn token(&self, flat: usize) -> &[f32] {
        &self.tokens[flat * self.dim..(flat + 1) * self.dim]
    }

    pub fn is_kept(&self, flat: usize) -> bool {
        self.keep[flat] != 0
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| (k != 0).then_some(i))
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k != 0).count()
    }

    pub fn coord(&self, flat: usize) -> (usize, usize, usize) {
        let n = self.grid;
        (flat / (n * n), (flat / n) % n, flat % n)
    }

    pub fn tokens_container(&self) -> TensorContainer {
        TensorContainer::from_f32(&[self.grid, self.grid, self.grid, self.dim], self.tokens.clone())
            .expect("token shape")
    }

    pub fn keep_container(&self) -> TensorContainer {
        TensorContainer::from_u8(&[self.grid; 3], self.keep.clone()).expect("keep shape")
    }

    pub fn from_containers(
        volume_id: impl Into<String>,
        layer: u32,
        tokens: TensorContainer,
        keep: TensorContainer,
    ) -> Result<Self, ModelError> {
        let (dims, tokens) = tokens.into_f32(&[None, None, None, None])?;
        let grid = dims[0];
        if dims[1] != grid || dims[2] != grid {
            return Err(ModelError::Shape(format!("token grid is not cubic: {dims:?}")));
        }
        let (_, keep) = keep.into_u8(&[Some(grid), Some(grid), Some(grid)])?;
        Self::new(volume_id, layer, grid, dims[3], tokens, keep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionPolicy {
    None,
    #[default]
    ConsistentAnomaly,
}

impl FromStr for ExclusionPolicy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "consistent-anomaly" => Ok(Self::ConsistentAnomaly),
            other => Err(ModelError::Config(format!(
                "unknown exclusion policy {other:?} (expected none | consistent-anomaly)"
            ))),
        }
    }
}

impl fmt::Display for ExclusionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::ConsistentAnomaly => "consistent-anomaly",
        })
    }
}

/// Tokenization and scoring parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub layers: Vec<u32>,
    pub patch_size: usize,
    /// Projected dimension per axis; fused tokens have `3 * proj_dim` entries.
    pub proj_dim: usize,
    /// `K` as a fraction of the number of other collections.
    pub k_fraction: f64,
    pub seed: u64,
    /// Tile edge of the pairwise distance kernel, in tokens.
    pub chunk_tokens: usize,
    /// A token is kept when its cube's foreground fraction exceeds this.
    pub mask_keep_threshold: f64,
    pub exclusion_policy: ExclusionPolicy,
    /// Fraction of each collection's highest-scoring tokens that take part
    /// in consistent-anomaly detection.
    pub exclusion_top_fraction: f64,
    /// Collections excluded per query; `None` means `max(1, round(0.1 B))`.
    pub exclusion_links: Option<usize>,
    /// A top token links to its nearest collection only when that distance
    /// is at most this fraction of the second-nearest. `1.0` disables the gate.
    pub exclusion_gap_ratio: f64,
    /// Re-normalize each axis's projected token to unit length before fusion.
    pub renormalize_projected: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            layers: vec![6, 12, 18, 24],
            patch_size: 14,
            proj_dim: 128,
            k_fraction: 0.3,
            seed: 0,
            chunk_tokens: 1024,
            mask_keep_threshold: 0.0,
            exclusion_policy: ExclusionPolicy::ConsistentAnomaly,
            exclusion_top_fraction: 0.05,
            exclusion_links: None,
            exclusion_gap_ratio: 0.3,
            renormalize_projected: false,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        if self.layers.is_empty() {
            problems.push("layers must be non-empty".to_string());
        }
        if self.patch_size == 0 {
            problems.push("patch_size must be positive".to_string());
        }
        if self.proj_dim == 0 {
            problems.push("proj_dim must be positive".to_string());
        }
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            problems.push(format!("k_fraction {} not in (0, 1]", self.k_fraction));
        }
        if self.chunk_tokens == 0 {
            problems.push("chunk_tokens must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.mask_keep_threshold) {
            problems.push(format!(
                "mask_keep_threshold {} not in [0, 1)",
                self.mask_keep_threshold
            ));
        }
        if !(self.exclusion_top_fraction > 0.0 && self.exclusion_top_fraction <= 1.0) {
            problems.push(format!(
                "exclusion_top_fraction {} not in (0, 1]",
                self.exclusion_top_fraction
            ));
        }
        if !(self.exclusion_gap_ratio > 0.0 && self.exclusion_gap_ratio <= 1.0) {
            problems.push(format!(
                "exclusion_gap_ratio {} not in (0, 1]",
                self.exclusion_gap_ratio
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(problems.join("; ")))
        }
    }
}

/// File names used by every stage.
pub mod naming {
    use super::*;

    pub fn features(dir: &Path, volume_id: &str, axis: Axis, layer: u32) -> PathBuf {
        dir.join(format!("{volume_id}_{axis}_{layer}.vxtk"))
    }

    pub fn mask(dir: &Path, volume_id: &str) -> PathBuf {
        dir.join(format!("{volume_id}_mask.vxtk"))
    }

    pub fn ground_truth(dir: &Path, volume_id: &str) -> PathBuf {
        dir.join(format!("{volume_id}_gt.vxtk"))
    }

    pub fn volume(dir: &Path, volume_id: &str) -> PathBuf {
        dir.join(format!("{volume_id}_volume.vxtk"))
    }

    pub fn meta(dir: &Path, volume_id: &str) -> PathBuf {
        dir.join(format!("{volume_id}.meta.json"))
    }

    pub fn tokens(dir: &Path, volume_id: &str, layer: u32) -> PathBuf {
        dir.join(format!("{volume_id}_{layer}_tokens.vxtk"))
    }

    pub fn keep(dir: &Path, volume_id: &str) -> PathBuf {
        dir.join(format!("{volume_id}_keep.vxtk"))
    }

    pub fn layer_map(dir: &Path, volume_id: &str, layer: u32) -> PathBuf {
        dir.join(format!("{volume_id}_{layer}_layermap.vxtk"))
    }

    pub fn coarse_map(dir: &Path, volume_id: &str) -> PathBuf {
        dir.join(format!("{volume_id}_coarse.vxtk"))
    }

    pub fn full_map(dir: &Path, volume_id: &str) -> PathBuf {
        dir.join(format!("{volume_id}_map.vxtk"))
    }

    /// Parses `{volume_id}_{axis}_{layer}.vxtk`.
    pub fn parse_features(file_name: &str) -> Option<(String, Axis, u32)> {
        let stem = file_name.strip_suffix(".vxtk")?;
        let (rest, layer) = stem.rsplit_once('_')?;
        let (vid, axis) = rest.rsplit_once('_')?;
        let axis = axis.parse().ok()?;
        let layer = layer.parse().ok()?;
        (!vid.is_empty()).then(|| (vid.to_string(), axis, layer))
    }

    /// Parses `{volume_id}_{layer}_tokens.vxtk`.
    pub fn parse_tokens(file_name: &str) -> Option<(String, u32)> {
        let stem = file_name.strip_suffix("_tokens.vxtk")?;
        let (vid, layer) = stem.rsplit_once('_')?;
        let layer = layer.parse().ok()?;
        (!vid.is_empty()).then(|| (vid.to_string(), layer))
    }

    /// Volume id of a `{volume_id}_{suffix}.vxtk` file.
    pub fn strip(file_name: &str, suffix: &str) -> Option<String> {
        let vid = file_name.strip_suffix(&format!("_{suffix}.vxtk"))?;
        (!vid.is_empty()).then(|| vid.to_string())
    }
}
