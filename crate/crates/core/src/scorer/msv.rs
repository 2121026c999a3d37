//! Mutual similarity vectors and the K-average score.

use serde::Serialize;

use super::kernel::{gram_sq, Prepared};
use super::ScoreError;
use crate::model::TokenCollection;

/// Position of a token within its volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenRef {
    pub volume_id: String,
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

/// Ascending nearest-token distances from one token to every other
/// non-excluded collection of the batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MutualSimilarityVector {
    pub token: TokenRef,
    pub distances: Vec<f32>,
    pub excluded: Vec<String>,
}

/// Distance from `z` to the closest kept token of `target`.
pub fn nearest_distance(z: &[f32], target: &TokenCollection) -> Result<f32, ScoreError> {
    if z.len() != target.dim {
        return Err(ScoreError::DimMismatch {
            expected: target.dim,
            found: z.len(),
        });
    }
    if target.kept_count() == 0 {
        return Err(ScoreError::EmptyForeground(target.volume_id.clone()));
    }
    let prepared = Prepared::new(target);
    let nz = super::kernel::dot(z, z);
    let best = (0..prepared.len())
        .map(|t| gram_sq(z, nz, prepared.row(t), prepared.norms[t]))
        .fold(f64::INFINITY, f64::min);
    Ok(best.sqrt() as f32)
}

/// MSV of token `flat` of collection `owner`, skipping the collections in
/// `excluded` (indices into `batch`).
pub fn compute_msv(
    batch: &[&TokenCollection],
    owner: usize,
    flat: usize,
    excluded: &[usize],
) -> Result<MutualSimilarityVector, ScoreError> {
    if batch.len() < 2 {
        return Err(ScoreError::BatchTooSmall(batch.len()));
    }
    let me = batch[owner];
    let z = me.token(flat);
    let mut distances = Vec::with_capacity(batch.len() - 1);
    for (j, other) in batch.iter().enumerate() {
        if j == owner || excluded.contains(&j) {
            continue;
        }
        distances.push(nearest_distance(z, other)?);
    }
    if distances.is_empty() {
        return Err(ScoreError::AllExcluded(me.volume_id.clone()));
    }
    distances.sort_by(f32::total_cmp);
    let (x, y, z) = me.coord(flat);
    let mut excluded: Vec<usize> = excluded.iter().copied().filter(|&j| j != owner && j < batch.len()).collect();
    excluded.sort_unstable();
    excluded.dedup();
    Ok(MutualSimilarityVector {
        token: TokenRef {
            volume_id: me.volume_id.clone(),
            x,
            y,
            z,
        },
        distances,
        excluded: excluded.into_iter().map(|j| batch[j].volume_id.clone()).collect(),
    })
}

/// Mean of the `k` smallest entries of an ascending slice. `k` beyond the
/// length is clamped; the caller decides whether that deserves a warning.
pub(crate) fn prefix_mean(sorted: &[f32], k: usize) -> f64 {
    let k = k.min(sorted.len());
    sorted[..k].iter().map(|&d| d as f64).sum::<f64>() / k as f64
}

/// MuSc score: mean of the `k` smallest MSV entries.
pub fn musc_score(msv: &MutualSimilarityVector, k: usize) -> Result<f64, ScoreError> {
    let len = msv.distances.len();
    if k == 0 || len == 0 {
        return Err(ScoreError::KOutOfRange { k, len });
    }
    if k > len {
        log::warn!("K = {k} exceeds MSV length {len}; averaging all entries");
    }
    Ok(prefix_mean(&msv.distances, k))
}

/// `K = max(1, round(fraction · (B − 1)))`.
pub fn choose_k(batch: usize, fraction: f64) -> usize {
    let others = batch.saturating_sub(1) as f64;
    ((fraction * others).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collection(id: &str, dim: usize, tokens: &[&[f32]], keep: &[u8]) -> TokenCollection {
        // Pads to a 2³ grid.
        let mut data = Vec::new();
        for t in tokens {
            data.extend_from_slice(t);
        }
        data.resize(8 * dim, 0.0);
        let mut k = keep.to_vec();
        k.resize(8, 0);
        TokenCollection::new(id, 1, 2, dim, data, k).unwrap()
    }

    #[test]
    fn nearest_distance_cases() {
        let c = collection("c", 2, &[&[3.0, 4.0], &[1.0, 1.0]], &[1, 1]);
        assert_eq!(nearest_distance(&[3.0, 4.0], &c).unwrap(), 0.0);
        let d = nearest_distance(&[0.0, 0.0], &c).unwrap();
        assert!((d - 2f32.sqrt()).abs() < 1e-7);
        // (1, 1) is background here, so only (3, 4) counts.
        let c = collection("c", 2, &[&[3.0, 4.0], &[1.0, 1.0]], &[1, 0]);
        assert!((nearest_distance(&[0.0, 0.0], &c).unwrap() - 5.0).abs() < 1e-6);
        let empty = collection("e", 2, &[], &[]);
        assert!(matches!(nearest_distance(&[0.0, 0.0], &empty), Err(ScoreError::EmptyForeground(_))));
    }

    #[test]
    fn msv_is_sorted_and_respects_exclusions() {
        let q = collection("q", 1, &[&[0.0]], &[1]);
        let a = collection("a", 1, &[&[4.0]], &[1]);
        let b = collection("b", 1, &[&[1.0]], &[1]);
        let c = collection("c", 1, &[&[-2.0]], &[1]);
        let batch = [&q, &a, &b, &c];
        let msv = compute_msv(&batch, 0, 0, &[]).unwrap();
        assert_eq!(msv.distances, vec![1.0, 2.0, 4.0]);
        assert_eq!(msv.token, TokenRef { volume_id: "q".into(), x: 0, y: 0, z: 0 });

        let msv = compute_msv(&batch, 0, 0, &[2]).unwrap();
        assert_eq!(msv.distances, vec![2.0, 4.0]);
        assert_eq!(msv.excluded, vec!["b".to_string()]);

        assert_eq!(compute_msv(&batch[..2], 0, 0, &[]).unwrap().distances.len(), 1);
        assert!(matches!(compute_msv(&batch[..1], 0, 0, &[]), Err(ScoreError::BatchTooSmall(1))));
        assert!(matches!(compute_msv(&batch, 0, 0, &[1, 2, 3]), Err(ScoreError::AllExcluded(_))));
    }

    fn msv(d: &[f32]) -> MutualSimilarityVector {
        MutualSimilarityVector {
            token: TokenRef { volume_id: "v".into(), x: 0, y: 0, z: 0 },
            distances: d.to_vec(),
            excluded: vec![],
        }
    }

    #[test]
    fn musc_score_cases() {
        let m = msv(&[1.0, 2.0, 4.0]);
        assert_eq!(musc_score(&m, 2).unwrap(), 1.5);
        assert_eq!(musc_score(&m, 3).unwrap(), 7.0 / 3.0);
        assert_eq!(musc_score(&m, 1).unwrap(), 1.0);
        // Clamped.
        assert_eq!(musc_score(&m, 10).unwrap(), 7.0 / 3.0);
        assert!(musc_score(&m, 0).is_err());
    }

    #[test]
    fn choose_k_cases() {
        assert_eq!(choose_k(180, 0.3), 54);
        assert_eq!(choose_k(2, 0.3), 1);
        assert_eq!(choose_k(2, 1.0), 1);
        assert_eq!(choose_k(11, 1.0), 10);
        assert_eq!(choose_k(18, 0.3), 5);
    }
}
