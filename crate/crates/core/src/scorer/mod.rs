//! Batch scoring of token collections.
//!
//! Every kept token is scored against all other volumes of the batch: its
//! nearest-token distance to each other collection, sorted ascending, forms
//! the mutual similarity vector (MSV), and the token's score is the mean of
//! the `K` smallest entries. Normal tissue recurs across volumes and finds
//! close matches; lesions do not.
//!
//! Layers are scored independently and averaged; a volume's patient score is
//! the maximum token score of the averaged map.

mod exclusion;
mod kernel;
mod msv;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ExclusionPolicy, ScoreConfig, TokenCollection};

pub use exclusion::{ExclusionMap, VolumeExclusion};
pub use msv::{choose_k, compute_msv, musc_score, nearest_distance, MutualSimilarityVector, TokenRef};

use exclusion::{sorted_row, ExclusionParams};
use kernel::{CrossTable, Prepared};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch of {0} collections; scoring needs at least 2")]
    BatchTooSmall(usize),
    #[error("volume {0} has no foreground tokens")]
    EmptyForeground(String),
    #[error("token dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("every other collection is excluded for a token of {0}")]
    AllExcluded(String),
    #[error("K = {k} is out of range for an MSV of length {len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("volume {volume_id}: {reason}")]
    LayerMismatch { volume_id: String, reason: String },
    #[error("chunk size {0} is below 2")]
    ChunkTooSmall(usize),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Token scores of one volume for one layer on the `[N_p³]` grid; zero on
/// background tokens.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerScoreMap {
    pub layer: u32,
    pub grid: usize,
    pub scores: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientScore {
    pub volume_id: String,
    pub score: f64,
}

/// Result of scoring one layer of a batch.
#[derive(Debug, Clone)]
pub struct LayerScoring {
    pub layer: u32,
    pub k: usize,
    pub maps: Vec<LayerScoreMap>,
    pub exclusions: ExclusionMap,
    /// Tokens whose MSV ended up shorter than `K`.
    pub clamped_tokens: usize,
}

fn validate_layer(batch: &[&TokenCollection]) -> Result<(), ScoreError> {
    let first = batch.first().ok_or(ScoreError::EmptyBatch)?;
    if batch.len() < 2 {
        return Err(ScoreError::BatchTooSmall(batch.len()));
    }
    for c in batch {
        if c.dim != first.dim {
            return Err(ScoreError::DimMismatch {
                expected: first.dim,
                found: c.dim,
            });
        }
        if c.layer != first.layer {
            return Err(ScoreError::LayerMismatch {
                volume_id: c.volume_id.clone(),
                reason: format!("layer {} mixed with layer {}", c.layer, first.layer),
            });
        }
        if c.kept_count() == 0 {
            return Err(ScoreError::EmptyForeground(c.volume_id.clone()));
        }
    }
    Ok(())
}

fn exclusion_params(batch: usize, config: &ScoreConfig) -> ExclusionParams {
    ExclusionParams {
        k: choose_k(batch, config.k_fraction),
        top_fraction: config.exclusion_top_fraction,
        links: config.exclusion_links,
        gap_ratio: config.exclusion_gap_ratio,
    }
}

/// Consistent-anomaly exclusion sets for one layer of a batch. Batches below
/// three collections and `ExclusionPolicy::None` give no exclusions.
pub fn consistent_anomaly_exclusion(
    batch: &[&TokenCollection],
    config: &ScoreConfig,
) -> Result<ExclusionMap, ScoreError> {
    validate_layer(batch)?;
    if config.exclusion_policy == ExclusionPolicy::None || batch.len() < 3 {
        return Ok(ExclusionMap::none(batch.len()));
    }
    let prepared: Vec<Prepared> = batch.iter().map(|c| Prepared::new(c)).collect();
    let table = CrossTable::compute(&prepared, config.chunk_tokens);
    let flat: Vec<Vec<usize>> = prepared.into_iter().map(|p| p.flat).collect();
    Ok(exclusion::from_table(&table, &flat, exclusion_params(batch.len(), config)))
}

/// Scores every kept token of every collection; all collections must come
/// from the same layer.
pub fn score_layer(batch: &[&TokenCollection], config: &ScoreConfig) -> Result<LayerScoring, ScoreError> {
    validate_layer(batch)?;
    let b = batch.len();
    let k = choose_k(b, config.k_fraction);
    let prepared: Vec<Prepared> = batch.iter().map(|c| Prepared::new(c)).collect();
    let table = CrossTable::compute(&prepared, config.chunk_tokens);
    let flat: Vec<Vec<usize>> = prepared.into_iter().map(|p| p.flat).collect();
    let exclusions = match config.exclusion_policy {
        ExclusionPolicy::ConsistentAnomaly if b >= 3 => {
            exclusion::from_table(&table, &flat, exclusion_params(b, config))
        }
        _ => ExclusionMap::none(b),
    };

    let per_volume: Vec<(LayerScoreMap, usize)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let c = batch[i];
            let mut scores = vec![0.0f32; c.len()];
            let mut buf = Vec::with_capacity(b);
            let mut clamped = 0;
            for (t, &f) in flat[i].iter().enumerate() {
                let excluded = exclusions.excluded_for(i, f);
                sorted_row(table.row(i, t), i, excluded, &mut buf);
                if buf.len() < k {
                    clamped += 1;
                }
                scores[f] = msv::prefix_mean(&buf, k) as f32;
            }
            let map = LayerScoreMap {
                layer: c.layer,
                grid: c.grid,
                scores,
            };
            (map, clamped)
        })
        .collect();

    let clamped_tokens = per_volume.iter().map(|(_, c)| c).sum();
    if clamped_tokens > 0 {
        log::warn!(
            "layer {}: {clamped_tokens} tokens have fewer than K = {k} MSV entries after exclusion; \
             averaging all remaining entries",
            batch[0].layer
        );
    }
    Ok(LayerScoring {
        layer: batch[0].layer,
        k,
        maps: per_volume.into_iter().map(|(m, _)| m).collect(),
        exclusions,
        clamped_tokens,
    })
}

/// Element-wise mean of per-layer maps, summed in the given order.
pub fn aggregate_layers(maps: &[LayerScoreMap]) -> Result<Vec<f32>, ScoreError> {
    let first = maps.first().ok_or(ScoreError::EmptyBatch)?;
    if let Some(bad) = maps.iter().find(|m| m.grid != first.grid || m.scores.len() != first.scores.len()) {
        return Err(ScoreError::LayerMismatch {
            volume_id: String::new(),
            reason: format!("layer {} grid {} vs layer {} grid {}", bad.layer, bad.grid, first.layer, first.grid),
        });
    }
    let n = maps.len() as f64;
    Ok((0..first.scores.len())
        .map(|v| (maps.iter().map(|m| m.scores[v] as f64).sum::<f64>() / n) as f32)
        .collect())
}

/// Maximum score over kept tokens.
pub fn patient_score(volume_id: &str, coarse: &[f32], keep: &[u8]) -> Result<PatientScore, ScoreError> {
    coarse
        .iter()
        .zip(keep)
        .filter(|&(_, &k)| k != 0)
        .map(|(&s, _)| s as f64)
        .reduce(f64::max)
        .map(|score| PatientScore {
            volume_id: volume_id.to_string(),
            score,
        })
        .ok_or_else(|| ScoreError::EmptyForeground(volume_id.to_string()))
}

/// All layers of one volume, sharing a keep grid.
#[derive(Debug, Clone)]
pub struct VolumeTokens {
    pub volume_id: String,
    pub layers: Vec<TokenCollection>,
}

impl VolumeTokens {
    pub fn new(volume_id: impl Into<String>, layers: Vec<TokenCollection>) -> Result<Self, ScoreError> {
        let volume_id = volume_id.into();
        if let Some(first) = layers.first() {
            for c in &layers {
                if c.keep != first.keep || c.grid != first.grid {
                    return Err(ScoreError::LayerMismatch {
                        volume_id,
                        reason: format!("layer {} keep grid differs from layer {}", c.layer, first.layer),
                    });
                }
            }
        }
        Ok(Self { volume_id, layers })
    }

    pub fn layer(&self, layer: u32) -> Option<&TokenCollection> {
        self.layers.iter().find(|c| c.layer == layer)
    }

    pub fn keep(&self) -> &[u8] {
        self.layers.first().map_or(&[], |c| &c.keep)
    }

    pub fn grid(&self) -> usize {
        self.layers.first().map_or(0, |c| c.grid)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeScores {
    pub volume_id: String,
    pub grid: usize,
    pub layer_maps: Vec<LayerScoreMap>,
    pub coarse: Vec<f32>,
    pub patient: PatientScore,
    /// (token, collection) pairs removed from MSVs, per layer.
    pub excluded_pairs: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchScores {
    pub k: usize,
    pub layers: Vec<u32>,
    pub volumes: Vec<VolumeScores>,
    pub clamped_tokens: usize,
}

/// Scores each configured layer independently and averages the maps.
pub fn score_batch(volumes: &[VolumeTokens], config: &ScoreConfig) -> Result<BatchScores, ScoreError> {
    config.validate().map_err(|e| ScoreError::Config(e.to_string()))?;
    if volumes.is_empty() {
        return Err(ScoreError::EmptyBatch);
    }
    let mut layer_results = Vec::with_capacity(config.layers.len());
    for &layer in &config.layers {
        let batch: Vec<&TokenCollection> = volumes
            .iter()
            .map(|v| {
                v.layer(layer).ok_or_else(|| ScoreError::LayerMismatch {
                    volume_id: v.volume_id.clone(),
                    reason: format!("no tokens for layer {layer}"),
                })
            })
            .collect::<Result<_, _>>()?;
        layer_results.push(score_layer(&batch, config)?);
    }
    let k = layer_results[0].k;
    let clamped_tokens = layer_results.iter().map(|r| r.clamped_tokens).sum();
    let mut per_volume_maps: Vec<Vec<LayerScoreMap>> = vec![Vec::new(); volumes.len()];
    let mut excluded: Vec<Vec<usize>> = vec![Vec::new(); volumes.len()];
    for r in layer_results {
        for (i, map) in r.maps.into_iter().enumerate() {
            per_volume_maps[i].push(map);
            excluded[i].push(r.exclusions.pair_count(i));
        }
    }
    let scored = volumes
        .iter()
        .zip(per_volume_maps)
        .zip(excluded)
        .map(|((v, layer_maps), excluded_pairs)| {
            let coarse = aggregate_layers(&layer_maps)?;
            let patient = patient_score(&v.volume_id, &coarse, v.keep())?;
            Ok(VolumeScores {
                volume_id: v.volume_id.clone(),
                grid: v.grid(),
                layer_maps,
                coarse,
                patient,
                excluded_pairs,
            })
        })
        .collect::<Result<_, ScoreError>>()?;
    Ok(BatchScores {
        k,
        layers: config.layers.clone(),
        volumes: scored,
        clamped_tokens,
    })
}

/// Splits `0..batch` into non-overlapping chunks of `chunk` volumes, in
/// order or after a seeded shuffle. A trailing single volume joins the
/// previous chunk, so every chunk holds at least two.
pub fn chunk_partition(batch: usize, chunk: usize, shuffle: Option<u64>) -> Result<Vec<Vec<usize>>, ScoreError> {
    if chunk < 2 {
        return Err(ScoreError::ChunkTooSmall(chunk));
    }
    if batch < 2 {
        return Err(ScoreError::BatchTooSmall(batch));
    }
    let mut order: Vec<usize> = (0..batch).collect();
    if let Some(seed) = shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut chunks: Vec<Vec<usize>> = order.chunks(chunk).map(<[usize]>::to_vec).collect();
    if chunks.last().is_some_and(|c| c.len() == 1) {
        let tail = chunks.pop().unwrap();
        chunks.last_mut().unwrap().extend(tail);
    }
    Ok(chunks)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChunkScores {
    /// Indices into the input volume list.
    pub members: Vec<usize>,
    pub scores: BatchScores,
}

/// Scores each chunk as an independent batch; `K` follows each chunk's size.
pub fn score_in_chunks(
    volumes: &[VolumeTokens],
    config: &ScoreConfig,
    chunk: usize,
    shuffle: Option<u64>,
) -> Result<Vec<ChunkScores>, ScoreError> {
    chunk_partition(volumes.len(), chunk, shuffle)?
        .into_iter()
        .map(|members| {
            let subset: Vec<VolumeTokens> = members.iter().map(|&i| volumes[i].clone()).collect();
            let scores = score_batch(&subset, config)?;
            Ok(ChunkScores { members, scores })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_collection(id: &str, grid: usize, dim: usize, rng: &mut ChaCha8Rng) -> TokenCollection {
        let n = grid.pow(3);
        let tokens = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        TokenCollection::new(id, 1, grid, dim, tokens, vec![1; n]).unwrap()
    }

    fn cfg(policy: ExclusionPolicy) -> ScoreConfig {
        ScoreConfig {
            layers: vec![1],
            exclusion_policy: policy,
            ..ScoreConfig::default()
        }
    }

    #[test]
    fn identical_volumes_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_collection("a", 2, 5, &mut rng);
        let batch: Vec<TokenCollection> = (0..4)
            .map(|i| TokenCollection {
                volume_id: format!("v{i}"),
                ..base.clone()
            })
            .collect();
        let refs: Vec<&TokenCollection> = batch.iter().collect();
        for policy in [ExclusionPolicy::None, ExclusionPolicy::ConsistentAnomaly] {
            let r = score_layer(&refs, &cfg(policy)).unwrap();
            assert!(r.maps.iter().all(|m| m.scores.iter().all(|&s| s == 0.0)));
        }
    }

    #[test]
    fn planted_outlier_holds_batch_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut batch: Vec<TokenCollection> = (0..6).map(|i| random_collection(&format!("v{i}"), 2, 4, &mut rng)).collect();
        let planted = 5;
        batch[3].tokens[planted * 4..(planted + 1) * 4].copy_from_slice(&[6.0, -6.0, 6.0, -6.0]);
        let refs: Vec<&TokenCollection> = batch.iter().collect();
        let r = score_layer(&refs, &cfg(ExclusionPolicy::None)).unwrap();
        let best = r.maps[3].scores[planted];
        for (i, m) in r.maps.iter().enumerate() {
            for (t, &s) in m.scores.iter().enumerate() {
                if (i, t) != (3, planted) {
                    assert!(s < best);
                }
            }
        }
    }

    #[test]
    fn background_tokens_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut batch: Vec<TokenCollection> = (0..3).map(|i| random_collection(&format!("v{i}"), 2, 3, &mut rng)).collect();
        batch[0].keep[2] = 0;
        let refs: Vec<&TokenCollection> = batch.iter().collect();
        let r = score_layer(&refs, &cfg(ExclusionPolicy::None)).unwrap();
        assert_eq!(r.maps[0].scores[2], 0.0);
        assert!(r.maps[0].scores.iter().enumerate().all(|(t, &s)| t == 2 || s > 0.0));
    }

    #[test]
    fn chunk_tokens_does_not_change_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch: Vec<TokenCollection> = (0..5).map(|i| random_collection(&format!("v{i}"), 3, 6, &mut rng)).collect();
        let refs: Vec<&TokenCollection> = batch.iter().collect();
        let run = |chunk| {
            let c = ScoreConfig {
                chunk_tokens: chunk,
                ..cfg(ExclusionPolicy::ConsistentAnomaly)
            };
            score_layer(&refs, &c).unwrap().maps
        };
        let reference = run(4096);
        assert_eq!(run(7), reference);
        assert_eq!(run(64), reference);
        assert_eq!(run(1), reference);
    }

    #[test]
    fn layer_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_collection("a", 2, 3, &mut rng);
        let b = random_collection("b", 2, 4, &mut rng);
        let c = cfg(ExclusionPolicy::None);
        assert!(matches!(score_layer(&[], &c), Err(ScoreError::EmptyBatch)));
        assert!(matches!(score_layer(&[&a], &c), Err(ScoreError::BatchTooSmall(1))));
        assert!(matches!(score_layer(&[&a, &b], &c), Err(ScoreError::DimMismatch { .. })));
        let mut empty = a.clone();
        empty.keep.fill(0);
        assert!(matches!(score_layer(&[&a, &empty], &c), Err(ScoreError::EmptyForeground(_))));
    }

    #[test]
    fn aggregation_and_patient_score() {
        let m = |layer, v: f32| LayerScoreMap {
            layer,
            grid: 1,
            scores: vec![v],
        };
        assert_eq!(aggregate_layers(&[m(1, 1.5)]).unwrap(), vec![1.5]);
        assert_eq!(aggregate_layers(&[m(1, 1.0), m(2, 3.0)]).unwrap(), vec![2.0]);
        assert_eq!(aggregate_layers(&[m(1, 1.0), m(2, 3.0), m(3, 5.0), m(4, 7.0)]).unwrap(), vec![4.0]);
        let bad = LayerScoreMap {
            layer: 2,
            grid: 2,
            scores: vec![0.0; 8],
        };
        assert!(aggregate_layers(&[m(1, 1.0), bad]).is_err());

        assert_eq!(patient_score("v", &[0.0; 4], &[1; 4]).unwrap().score, 0.0);
        assert_eq!(patient_score("v", &[0.1, 0.9, 0.3, 5.0], &[1, 1, 1, 0]).unwrap().score, 0.9f32 as f64);
        assert!(patient_score("v", &[1.0], &[0]).is_err());
    }

    #[test]
    fn partition_sizes() {
        let sizes = |b, c| -> Vec<usize> { chunk_partition(b, c, None).unwrap().iter().map(Vec::len).collect() };
        assert_eq!(sizes(180, 90), vec![90, 90]);
        assert_eq!(sizes(10, 4), vec![4, 4, 2]);
        assert_eq!(sizes(9, 4), vec![4, 5]);
        assert_eq!(sizes(7, 7), vec![7]);
        assert!(matches!(chunk_partition(10, 1, None), Err(ScoreError::ChunkTooSmall(1))));
        let shuffled = chunk_partition(10, 4, Some(3)).unwrap();
        let mut all: Vec<usize> = shuffled.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(shuffled, chunk_partition(10, 4, Some(3)).unwrap());
    }

    #[test]
    fn exclusion_policy_none_and_small_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch: Vec<TokenCollection> = (0..4).map(|i| random_collection(&format!("v{i}"), 2, 3, &mut rng)).collect();
        let refs: Vec<&TokenCollection> = batch.iter().collect();
        let none = consistent_anomaly_exclusion(&refs, &cfg(ExclusionPolicy::None)).unwrap();
        assert!(none.is_empty());
        assert_eq!(none.per_volume.len(), 4);
        let two = consistent_anomaly_exclusion(&refs[..2], &cfg(ExclusionPolicy::ConsistentAnomaly)).unwrap();
        assert!(two.is_empty());
    }

    #[test]
    fn planted_pair_excludes_each_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut batch: Vec<TokenCollection> = (0..6).map(|i| random_collection(&format!("v{i}"), 3, 8, &mut rng)).collect();
        let shared = [5.0f32; 8];
        let (ta, tb) = (4, 19);
        batch[0].tokens[ta * 8..(ta + 1) * 8].copy_from_slice(&shared);
        batch[1].tokens[tb * 8..(tb + 1) * 8].copy_from_slice(&shared);
        let refs: Vec<&TokenCollection> = batch.iter().collect();

        let ex = consistent_anomaly_exclusion(&refs, &cfg(ExclusionPolicy::ConsistentAnomaly)).unwrap();
        assert_eq!(ex.excluded_for(0, ta), &[1]);
        assert_eq!(ex.excluded_for(1, tb), &[0]);

        let plain = score_layer(&refs, &cfg(ExclusionPolicy::None)).unwrap();
        let guarded = score_layer(&refs, &cfg(ExclusionPolicy::ConsistentAnomaly)).unwrap();
        assert!(guarded.maps[0].scores[ta] > plain.maps[0].scores[ta]);
        assert!(guarded.maps[1].scores[tb] > plain.maps[1].scores[tb]);

        // The exclusion matches a direct MSV with that collection removed.
        let k = choose_k(6, 0.3);
        let msv = compute_msv(&refs, 0, ta, &[1]).unwrap();
        assert_eq!(guarded.maps[0].scores[ta], musc_score(&msv, k).unwrap() as f32);
    }

    #[test]
    fn chunked_scoring_matches_full_batch_for_one_chunk() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vols: Vec<VolumeTokens> = (0..5)
            .map(|i| VolumeTokens::new(format!("v{i}"), vec![random_collection(&format!("v{i}"), 2, 3, &mut rng)]).unwrap())
            .collect();
        let c = cfg(ExclusionPolicy::ConsistentAnomaly);
        let full = score_batch(&vols, &c).unwrap();
        let chunks = score_in_chunks(&vols, &c, 5, None).unwrap();
        assert_eq!(chunks.len(), 1);
        for (a, b) in full.volumes.iter().zip(&chunks[0].scores.volumes) {
            assert_eq!(a.coarse, b.coarse);
            assert_eq!(a.patient, b.patient);
        }
        let split = score_in_chunks(&vols, &c, 2, None).unwrap();
        assert_eq!(split.iter().map(|c| c.members.len()).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(split[0].scores.k, 1);
    }

    #[test]
    fn score_batch_requires_every_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vols: Vec<VolumeTokens> = (0..3)
            .map(|i| VolumeTokens::new(format!("v{i}"), vec![random_collection(&format!("v{i}"), 2, 3, &mut rng)]).unwrap())
            .collect();
        let c = ScoreConfig {
            layers: vec![1, 2],
            ..cfg(ExclusionPolicy::None)
        };
        assert!(matches!(score_batch(&vols, &c), Err(ScoreError::LayerMismatch { .. })));
    }
}
