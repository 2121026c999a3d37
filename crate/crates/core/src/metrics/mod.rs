//! Patient- and voxel-level evaluation.
//!
//! Voxel metrics are pooled over the brain-mask foreground of every volume.
//! Background voxels always score zero, so counting them would inflate
//! voxel AUROC; [`EvalOptions::include_background`] turns them back on for
//! comparison. Dice uses one global threshold for the whole dataset, and
//! lesion detection reuses that threshold unless another is given.

mod lesions;
mod ranking;
mod segmentation;

use serde::Serialize;
use thiserror::Error;

use crate::model::{BrainMask, Volume};

pub use lesions::{connected_components_3d, lesion_stats, ltpr, Labeling, LesionStats, LtprBin, DEFAULT_BIN_EDGES_MM3};
pub use ranking::{auroc, average_precision};
pub use segmentation::{dice_sweep, iou_at, Confusion, DiceSweep, VoxelSet};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("scores contain NaN")]
    NaN,
    #[error("only one class present")]
    SingleClass,
    #[error("no positive samples")]
    NoPositives,
    #[error("need at least one threshold")]
    NoThresholds,
    #[error("volume #{index}: dimension mismatch ({detail})")]
    DimMismatch { index: usize, detail: String },
    #[error("spacing must be positive, got {0}")]
    Spacing(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOptions {
    pub n_thresholds: usize,
    pub include_background: bool,
    pub spacing_mm: f64,
    /// Binarization threshold for lesion detection; defaults to the
    /// Dice-optimal threshold.
    pub ltpr_threshold: Option<f32>,
    pub bin_edges_mm3: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_thresholds: 200,
            include_background: false,
            spacing_mm: crate::model::DEFAULT_SPACING_MM,
            ltpr_threshold: None,
            bin_edges_mm3: DEFAULT_BIN_EDGES_MM3.to_vec(),
        }
    }
}

/// Everything needed to evaluate one volume.
#[derive(Debug, Clone)]
pub struct EvalVolume {
    pub volume_id: String,
    pub map: Volume,
    pub ground_truth: BrainMask,
    pub mask: BrainMask,
    pub patient_score: f64,
    pub anomalous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub volumes: usize,
    pub anomalous_volumes: usize,
    pub patient_auroc: f64,
    pub patient_ap: f64,
    pub voxel_auroc: f64,
    pub voxel_ap: f64,
    pub dice_max: f64,
    pub iou_at_dice_max: f64,
    pub dice_threshold: f32,
    pub ltpr_threshold: f32,
    pub include_background: bool,
    pub ltpr_bins: Vec<LtprBin>,
}

pub fn evaluate(volumes: &[EvalVolume], options: &EvalOptions) -> Result<(EvalReport, Vec<LesionStats>), MetricError> {
    if !(options.spacing_mm > 0.0) {
        return Err(MetricError::Spacing(options.spacing_mm));
    }
    let patient_scores: Vec<f64> = volumes.iter().map(|v| v.patient_score).collect();
    let patient_labels: Vec<bool> = volumes.iter().map(|v| v.anomalous).collect();
    let patient_auroc = auroc(&patient_scores, &patient_labels)?;
    let patient_ap = average_precision(&patient_scores, &patient_labels)?;

    let voxels = VoxelSet::pool(
        &volumes.iter().map(|v| &v.map).collect::<Vec<_>>(),
        &volumes.iter().map(|v| &v.ground_truth).collect::<Vec<_>>(),
        &volumes.iter().map(|v| &v.mask).collect::<Vec<_>>(),
        options.include_background,
    )?;
    let voxel_auroc = auroc(&voxels.scores, &voxels.truth)?;
    let voxel_ap = average_precision(&voxels.scores, &voxels.truth)?;
    let sweep = dice_sweep(&voxels, options.n_thresholds)?;
    let iou_at_dice_max = iou_at(&voxels, sweep.threshold);
    drop(voxels);

    let ltpr_threshold = options.ltpr_threshold.unwrap_or(sweep.threshold);
    let mut lesions = Vec::new();
    for v in volumes {
        let predicted: Vec<u8> = v
            .map
            .data
            .iter()
            .zip(&v.mask.data)
            .map(|(&s, &m)| (s >= ltpr_threshold && (options.include_background || m != 0)) as u8)
            .collect();
        let predicted = BrainMask {
            size: v.map.size,
            data: predicted,
        };
        lesions.extend(lesion_stats(&v.volume_id, &v.ground_truth, &predicted, options.spacing_mm));
    }
    let report = EvalReport {
        volumes: volumes.len(),
        anomalous_volumes: patient_labels.iter().filter(|&&l| l).count(),
        patient_auroc,
        patient_ap,
        voxel_auroc,
        voxel_ap,
        dice_max: sweep.dice,
        iou_at_dice_max,
        dice_threshold: sweep.threshold,
        ltpr_threshold,
        include_background: options.include_background,
        ltpr_bins: ltpr(&lesions, &options.bin_edges_mm3),
    };
    Ok((report, lesions))
}
