//! Deterministic synthetic data for desk-scale runs.
//!
//! A "brain" is an ellipsoidal mask filled with smooth low-frequency texture
//! shared across subjects plus a small subject-specific component; anomalous
//! subjects get one bright spherical lesion. Slice features come from
//! [`MockEncoder`], a fixed random patch embedding, so the whole pipeline runs
//! without a neural network.

mod encoder;
mod lemma;
mod run;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{idx3, BrainMask, Label, ModelError, Volume, VolumeMeta};

pub use encoder::{extract_all_axes, mock_extract, MockEncoder};
pub use lemma::{build_lemma_scenario, LemmaScenario};
pub use run::{evaluate_dataset, synth_score_config, tokenize_dataset};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("volume {0}: no lesion position keeps the sphere inside the mask")]
    LesionDoesNotFit(String),
    #[error("alpha {alpha} with patch {patch} does not give a whole number of anomalous slices")]
    InfeasibleAlpha { alpha: f64, patch: usize },
    #[error("volume edge {size} is not a multiple of patch {patch}")]
    NotDivisible { size: usize, patch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenize(#[from] crate::tokenizer::TokenizeError),
    #[error(transparent)]
    Score(#[from] crate::scorer::ScoreError),
    #[error(transparent)]
    Map(#[from] crate::mapping::MapError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub size: usize,
    pub patch: usize,
    pub n_normal: usize,
    pub n_anomalous: usize,
    /// Lesion radius range in voxels, inclusive.
    pub lesion_radius: (f64, f64),
    pub lesion_delta: f32,
    pub texture_seed: u64,
    pub encoder_seed: u64,
    pub feature_dim: usize,
    pub spacing_mm: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 56,
            patch: 14,
            n_normal: 12,
            n_anomalous: 6,
            lesion_radius: (7.0, 10.0),
            lesion_delta: 0.6,
            texture_seed: 1,
            encoder_seed: 2,
            feature_dim: 64,
            spacing_mm: 0.7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut problems = Vec::new();
        if self.patch == 0 || self.size == 0 || !self.size.is_multiple_of(self.patch) {
            problems.push(format!("size {} must be a positive multiple of patch {}", self.size, self.patch));
        }
        let (lo, hi) = self.lesion_radius;
        if !(lo > 0.0 && lo <= hi && hi < self.size as f64 / 2.0) {
            problems.push(format!("lesion radius range ({lo}, {hi}) must satisfy 0 < lo <= hi < size/2"));
        }
        if self.n_normal + self.n_anomalous == 0 {
            problems.push("need at least one volume".to_string());
        }
        if self.feature_dim == 0 {
            problems.push("feature_dim must be positive".to_string());
        }
        if !(self.spacing_mm > 0.0) {
            problems.push(format!("spacing {} must be positive", self.spacing_mm));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(problems.join("; ")))
        }
    }

    pub fn encoder(&self, layer: u32) -> MockEncoder {
        MockEncoder::new(self.patch, self.feature_dim, layer_seed(self.encoder_seed, layer))
    }
}

/// Distinct encoder seed per layer.
fn layer_seed(seed: u64, layer: u32) -> u64 {
    let mut z = seed ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lesion {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVolume {
    pub meta: VolumeMeta,
    pub volume: Volume,
    pub mask: BrainMask,
    pub ground_truth: BrainMask,
    pub lesion: Option<Lesion>,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    freq: [f64; 3],
    phase: f64,
    amp: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amp: f64, max_freq: f64) -> Self {
        let mut freq = [0.0; 3];
        for f in &mut freq {
            *f = rng.random_range(-max_freq..max_freq);
        }
        Self {
            freq,
            phase: rng.random_range(0.0..2.0 * PI),
            amp,
        }
    }

    fn at(&self, p: [f64; 3], size: f64) -> f64 {
        let arg = (self.freq[0] * p[0] + self.freq[1] * p[1] + self.freq[2] * p[2]) * 2.0 * PI / size;
        self.amp * (arg + self.phase).cos()
    }
}

/// Voxels of the sphere, in scan order.
pub fn sphere_voxels(size: usize, center: [f64; 3], radius: f64) -> Vec<(usize, usize, usize)> {
    let r2 = radius * radius;
    let range = |c: f64| {
        let lo = (c - radius).floor().max(0.0) as usize;
        let hi = ((c + radius).ceil() as usize).min(size - 1);
        lo..=hi
    };
    let mut out = Vec::new();
    for x in range(center[0]) {
        for y in range(center[1]) {
            for z in range(center[2]) {
                let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2 {
                    out.push((x, y, z));
                }
            }
        }
    }
    out
}

/// Generates every volume of `spec`, in id order `synth_000`, `synth_001`, ….
/// Anomalous subjects are placed at seeded random positions in that order.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<SynthVolume>, SynthError> {
    spec.validate()?;
    let total = spec.n_normal + spec.n_anomalous;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let shared: Vec<Wave> = (0..4).map(|_| Wave::random(&mut rng, 0.05, 2.0)).collect();
    let mut labels = vec![false; spec.n_normal];
    labels.extend(std::iter::repeat_n(true, spec.n_anomalous));
    // Fisher–Yates with the shared stream keeps placement reproducible.
    for i in (1..labels.len()).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    (0..total)
        .map(|i| generate_volume(spec, &shared, i, labels[i]))
        .collect()
}

fn generate_volume(spec: &SynthSpec, shared: &[Wave], index: usize, anomalous: bool) -> Result<SynthVolume, SynthError> {
    let size = spec.size;
    let s = size as f64;
    let volume_id = format!("synth_{index:03}");
    let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(spec.texture_seed, 1000 + index as u32));
    let jitter = |rng: &mut ChaCha8Rng, v: f64| v * (1.0 + rng.random_range(-0.01..0.01));
    let center = [0usize; 3].map(|_| (s - 1.0) / 2.0 + rng.random_range(-0.5..0.5));
    let axes = [jitter(&mut rng, 0.40 * s), jitter(&mut rng, 0.34 * s), jitter(&mut rng, 0.38 * s)];
    let own: Vec<Wave> = (0..2).map(|_| Wave::random(&mut rng, 0.015, 3.0)).collect();
    let noise = Normal::new(0.0, 0.01).expect("finite std");

    let mut volume = Volume::zeros(size);
    let mut mask = BrainMask::filled(size, false);
    for x in 0..size {
        for y in 0..size {
            for z in 0..size {
                let p = [x as f64, y as f64, z as f64];
                let rho2: f64 = (0..3).map(|a| ((p[a] - center[a]) / axes[a]).powi(2)).sum();
                if rho2 > 1.0 {
                    continue;
                }
                let i = idx3(size, x, y, z);
                mask.data[i] = 1;
                let tissue = 0.6 - 0.2 * rho2
                    + shared.iter().map(|w| w.at(p, s)).sum::<f64>()
                    + own.iter().map(|w| w.at(p, s)).sum::<f64>()
                    + noise.sample(&mut rng);
                volume.data[i] = tissue as f32;
            }
        }
    }

    let mut ground_truth = BrainMask::filled(size, false);
    let mut lesion = None;
    if anomalous {
        let (lo, hi) = spec.lesion_radius;
        let radius = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut placed = None;
        for _ in 0..500 {
            let c = [0usize; 3].map(|_| rng.random_range(radius..s - 1.0 - radius));
            let voxels = sphere_voxels(size, c, radius);
            if voxels.iter().all(|&(x, y, z)| mask.get(x, y, z)) {
                placed = Some((c, voxels));
                break;
            }
        }
        let (c, voxels) = placed.ok_or_else(|| SynthError::LesionDoesNotFit(volume_id.clone()))?;
        for (x, y, z) in voxels {
            let i = idx3(size, x, y, z);
            ground_truth.data[i] = 1;
            volume.data[i] += spec.lesion_delta;
        }
        lesion = Some(Lesion { center: c, radius });
    }

    Ok(SynthVolume {
        meta: VolumeMeta {
            volume_id,
            size,
            voxel_spacing_mm: spec.spacing_mm,
            label: if anomalous { Label::Anomalous } else { Label::Normal },
        },
        volume,
        mask,
        ground_truth,
        lesion,
    })
}
