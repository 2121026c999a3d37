use rayon::prelude::*;

use super::{extract_all_axes, SynthError, SynthSpec, SynthVolume};
use crate::mapping::AnomalyMap;
use crate::metrics::{evaluate, EvalOptions, EvalReport, EvalVolume, LesionStats};
use crate::model::{Label, ScoreConfig};
use crate::scorer::{VolumeScores, VolumeTokens};
use crate::tokenizer::{build_projection, tokenize_volume};

/// Default scoring configuration for a synthetic spec. The projection width
/// is capped at the mock feature width.
pub fn synth_score_config(spec: &SynthSpec) -> ScoreConfig {
    ScoreConfig {
        patch_size: spec.patch,
        proj_dim: spec.feature_dim.min(32),
        ..ScoreConfig::default()
    }
}

/// Extracts mock features for every configured layer and tokenizes them,
/// all in memory.
pub fn tokenize_dataset(
    dataset: &[SynthVolume],
    spec: &SynthSpec,
    config: &ScoreConfig,
) -> Result<Vec<VolumeTokens>, SynthError> {
    let projection = build_projection(spec.feature_dim, config.proj_dim, config.seed)?;
    let encoders: Vec<_> = config.layers.iter().map(|&l| (l, spec.encoder(l))).collect();
    dataset
        .par_iter()
        .map(|v| {
            let id = &v.meta.volume_id;
            let layers = encoders
                .iter()
                .map(|(layer, enc)| {
                    let stacks = extract_all_axes(enc, id, &v.volume, *layer)?;
                    Ok(tokenize_volume(&stacks, *layer, &v.mask, &projection, config)?)
                })
                .collect::<Result<Vec<_>, SynthError>>()?;
            Ok(VolumeTokens::new(id.clone(), layers)?)
        })
        .collect()
}

/// Builds voxel maps from `scores` and evaluates them against the synthetic
/// ground truth. `scores` must follow the order of `dataset`.
pub fn evaluate_dataset(
    dataset: &[SynthVolume],
    scores: &[&VolumeScores],
    options: &EvalOptions,
) -> Result<(EvalReport, Vec<LesionStats>), SynthError> {
    let volumes = dataset
        .iter()
        .zip(scores)
        .map(|(v, s)| {
            let map = AnomalyMap::build(&s.volume_id, s.grid, s.coarse.clone(), &v.mask)?;
            Ok(EvalVolume {
                volume_id: v.meta.volume_id.clone(),
                map: map.full,
                ground_truth: v.ground_truth.clone(),
                mask: v.mask.clone(),
                patient_score: s.patient.score,
                anomalous: v.meta.label == Label::Anomalous,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(evaluate(&volumes, options)?)
}
