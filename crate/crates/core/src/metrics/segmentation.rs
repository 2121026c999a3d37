use serde::Serialize;

use super::MetricError;
use crate::model::{BrainMask, Volume};

/// Voxel scores and ground truth pooled over a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoxelSet {
    pub scores: Vec<f32>,
    pub truth: Vec<bool>,
}

impl VoxelSet {
    /// Pools every volume's voxels, restricted to the brain mask unless
    /// `include_background` is set.
    pub fn pool(
        maps: &[&Volume],
        gts: &[&BrainMask],
        masks: &[&BrainMask],
        include_background: bool,
    ) -> Result<Self, MetricError> {
        if maps.len() != gts.len() || maps.len() != masks.len() {
            return Err(MetricError::LengthMismatch {
                scores: maps.len(),
                labels: gts.len(),
            });
        }
        let mut out = VoxelSet::default();
        for (i, ((map, gt), mask)) in maps.iter().zip(gts).zip(masks).enumerate() {
            if map.size != gt.size || map.size != mask.size {
                return Err(MetricError::DimMismatch {
                    index: i,
                    detail: format!("map {}, gt {}, mask {}", map.size, gt.size, mask.size),
                });
            }
            for ((&s, &g), &m) in map.data.iter().zip(&gt.data).zip(&mask.data) {
                if include_background || m != 0 {
                    out.scores.push(s);
                    out.truth.push(g != 0);
                }
            }
        }
        Ok(out)
    }

    pub fn positives(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }

    /// Counts with prediction `score >= threshold`.
    pub fn confusion(&self, threshold: f32) -> Confusion {
        let mut c = Confusion::default();
        for (&s, &t) in self.scores.iter().zip(&self.truth) {
            match (s >= threshold, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn dice(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }

    pub fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            self.tp as f64 / den as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiceSweep {
    pub dice: f64,
    pub threshold: f32,
}

/// Best pooled Dice over `n_thresholds` candidate thresholds.
///
/// Candidates are evenly spaced quantiles of the distinct pooled scores:
/// candidate `m` is the distinct value at rank `round(m (U − 1) / (n − 1))`.
/// With `n` at least the number of distinct scores this is the exhaustive
/// sweep. Ties in Dice keep the lowest threshold.
pub fn dice_sweep(voxels: &VoxelSet, n_thresholds: usize) -> Result<DiceSweep, MetricError> {
    if n_thresholds == 0 {
        return Err(MetricError::NoThresholds);
    }
    if voxels.scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::NaN);
    }
    let positives = voxels.positives() as u64;
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    // Distinct values ascending with positive/negative counts per value.
    let mut pairs: Vec<(f32, bool)> = voxels.scores.iter().copied().zip(voxels.truth.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut values: Vec<f32> = Vec::new();
    let mut counts: Vec<(u64, u64)> = Vec::new();
    for (s, t) in pairs {
        if values.last() != Some(&s) {
            values.push(s);
            counts.push((0, 0));
        }
        let c = counts.last_mut().unwrap();
        if t {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    // Predicted positives at threshold values[i] are the suffix from i.
    let mut suffix = vec![(0u64, 0u64); values.len() + 1];
    for i in (0..values.len()).rev() {
        suffix[i] = (suffix[i + 1].0 + counts[i].0, suffix[i + 1].1 + counts[i].1);
    }
    let u = values.len();
    let rank = |m: usize| -> usize {
        if n_thresholds == 1 {
            (u - 1) / 2
        } else {
            ((m as f64) * (u - 1) as f64 / (n_thresholds - 1) as f64).round() as usize
        }
    };
    let mut best = DiceSweep {
        dice: -1.0,
        threshold: values[0],
    };
    for m in 0..n_thresholds {
        let i = rank(m);
        let (tp, fp) = suffix[i];
        let dice = Confusion {
            tp,
            fp,
            fn_: positives - tp,
        }
        .dice();
        if dice > best.dice {
            best = DiceSweep {
                dice,
                threshold: values[i],
            };
        }
    }
    Ok(best)
}

/// Pooled IoU at `threshold`.
pub fn iou_at(voxels: &VoxelSet, threshold: f32) -> f64 {
    voxels.confusion(threshold).iou()
}
