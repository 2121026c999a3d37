//! Chained run driven by a flat key-value TOML file. Precedence is
//! flag > file > built-in default.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use voxscore::ExclusionPolicy;

use crate::args::{EvaluateArgs, PipelineArgs, ScoreArgs, SynthArgs, TokenizeArgs};
use crate::error::ValidationError;
use crate::manifest::{RunManifest, StageTiming, Stopwatch};
use crate::synth::DataDirs;
use crate::{evaluate, score, synth, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Synth,
    Features,
}

/// Every key the config file accepts; all optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFile {
    pub work_dir: Option<PathBuf>,
    pub source: Option<Source>,
    pub features_dir: Option<PathBuf>,
    pub masks_dir: Option<PathBuf>,
    pub gt_dir: Option<PathBuf>,
    pub meta_dir: Option<PathBuf>,
    pub volumes_dir: Option<PathBuf>,

    pub size: Option<usize>,
    pub patch_size: Option<usize>,
    pub n_normal: Option<usize>,
    pub n_anomalous: Option<usize>,
    pub lesion_radius_min: Option<f64>,
    pub lesion_radius_max: Option<f64>,
    pub lesion_delta: Option<f32>,
    pub texture_seed: Option<u64>,
    pub encoder_seed: Option<u64>,
    pub feature_dim: Option<usize>,
    pub spacing: Option<f64>,

    pub layers: Option<Vec<u32>>,
    pub proj_dim: Option<usize>,
    pub seed: Option<u64>,
    pub mask_keep_threshold: Option<f64>,
    pub renormalize_projected: Option<bool>,

    pub k_fraction: Option<f64>,
    pub chunk_size: Option<usize>,
    pub shuffle_seed: Option<u64>,
    pub chunk_tokens: Option<usize>,
    pub policy: Option<ExclusionPolicy>,
    pub exclusion_top_fraction: Option<f64>,
    pub exclusion_links: Option<usize>,
    pub exclusion_gap_ratio: Option<f64>,

    pub n_thresholds: Option<usize>,
    pub include_background: Option<bool>,
    pub ltpr_threshold: Option<f32>,
    pub overlays: Option<bool>,
}

/// Fully resolved configuration, echoed into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,
    pub source: Source,
    pub synth: Option<SynthArgs>,
    pub tokenize: TokenizeArgs,
    pub score: ScoreArgs,
    pub evaluate: EvaluateArgs,
}

pub fn load_file(path: &std::path::Path) -> anyhow::Result<PipelineFile> {
    let text = fs::read_to_string(path).map_err(|e| ValidationError::single(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| ValidationError::single(format!("{}: {e}", path.display())).into())
}

pub fn resolve(file: PipelineFile, flags: &PipelineArgs) -> Result<PipelineConfig, ValidationError> {
    let mut problems = Vec::new();
    let work_dir = flags.work_dir.clone().or(file.work_dir);
    if work_dir.is_none() {
        problems.push("work_dir is required".to_string());
    }
    let work_dir = work_dir.unwrap_or_default();
    let source = file.source.unwrap_or_default();
    let data = work_dir.join("data");
    let dirs = DataDirs(&data);

    let layers = flags.layers.clone().or(file.layers).unwrap_or_else(|| vec![6, 12, 18, 24]);
    let patch_size = file.patch_size.unwrap_or(14);
    let spacing = file.spacing;

    let (synth_args, features_dir, masks_dir, gt_dir, meta_dir, volumes_dir) = match source {
        Source::Synth => {
            for (key, set) in [
                ("features_dir", file.features_dir.is_some()),
                ("masks_dir", file.masks_dir.is_some()),
                ("gt_dir", file.gt_dir.is_some()),
            ] {
                if set {
                    problems.push(format!("{key} is only used with source = \"features\""));
                }
            }
            let a = SynthArgs {
                out: data.clone(),
                size: file.size.unwrap_or(56),
                patch_size,
                n_normal: file.n_normal.unwrap_or(12),
                n_anomalous: file.n_anomalous.unwrap_or(6),
                lesion_radius_min: file.lesion_radius_min.unwrap_or(7.0),
                lesion_radius_max: file.lesion_radius_max.unwrap_or(10.0),
                lesion_delta: file.lesion_delta.unwrap_or(0.6),
                texture_seed: file.texture_seed.unwrap_or(1),
                encoder_seed: file.encoder_seed.unwrap_or(2),
                feature_dim: file.feature_dim.unwrap_or(64),
                spacing: spacing.unwrap_or(voxscore::model::DEFAULT_SPACING_MM),
                layers: layers.clone(),
            };
            (Some(a), dirs.features(), dirs.masks(), dirs.gt(), Some(dirs.meta()), Some(dirs.volumes()))
        }
        Source::Features => {
            let mut need = |key: &str, v: Option<PathBuf>| {
                if v.is_none() {
                    problems.push(format!("{key} is required when source = \"features\""));
                }
                v.unwrap_or_default()
            };
            let f = need("features_dir", file.features_dir);
            let m = need("masks_dir", file.masks_dir);
            let g = need("gt_dir", file.gt_dir);
            (None, f, m, g, file.meta_dir, file.volumes_dir)
        }
    };

    // The mock encoder is narrow; project synthetic features to at most 32.
    let default_proj = synth_args.as_ref().map_or(128, |s| s.feature_dim.min(32));
    let tokens_dir = work_dir.join("tokens");
    let maps_dir = work_dir.join("maps");
    let tokenize = TokenizeArgs {
        features_dir,
        masks_dir: masks_dir.clone(),
        out: tokens_dir.clone(),
        patch_size,
        proj_dim: flags.proj_dim.or(file.proj_dim).unwrap_or(default_proj),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        layers: layers.clone(),
        mask_keep_threshold: file.mask_keep_threshold.unwrap_or(0.0),
        renormalize: file.renormalize_projected.unwrap_or(false),
    };
    let score = ScoreArgs {
        tokens_dir,
        out: maps_dir.clone(),
        masks_dir: Some(masks_dir.clone()),
        layers: Some(layers),
        k_frac: flags.k_frac.or(file.k_fraction).unwrap_or(0.3),
        chunk_size: flags.chunk_size.or(file.chunk_size),
        shuffle_seed: file.shuffle_seed,
        policy: flags.policy.or(file.policy).unwrap_or_default(),
        chunk_tokens: flags.chunk_tokens.or(file.chunk_tokens).unwrap_or(1024),
        exclusion_top_fraction: file.exclusion_top_fraction.unwrap_or(0.05),
        exclusion_links: file.exclusion_links,
        exclusion_gap_ratio: file.exclusion_gap_ratio.unwrap_or(0.3),
    };
    let evaluate = EvaluateArgs {
        maps_dir,
        gt_dir,
        masks_dir,
        out: work_dir.join("eval"),
        meta_dir,
        volumes_dir,
        scores: None,
        spacing,
        n_thresholds: file.n_thresholds.unwrap_or(200),
        include_background: file.include_background.unwrap_or(false),
        ltpr_threshold: file.ltpr_threshold,
        overlays: flags.overlays || file.overlays.unwrap_or(false),
    };
    ValidationError::check(problems)?;
    Ok(PipelineConfig {
        work_dir,
        source,
        synth: synth_args,
        tokenize,
        score,
        evaluate,
    })
}

fn prefixed(prefix: &str, stages: Vec<StageTiming>) -> Vec<StageTiming> {
    stages
        .into_iter()
        .map(|s| StageTiming {
            stage: format!("{prefix}.{}", s.stage),
            seconds: s.seconds,
        })
        .collect()
}

pub fn run(flags: &PipelineArgs) -> anyhow::Result<()> {
    let file = match &flags.config {
        Some(p) => load_file(p)?,
        None => PipelineFile::default(),
    };
    let config = resolve(file, flags)?;
    let mut watch = Stopwatch::new();
    let mut working_set = 0;
    if let Some(s) = &config.synth {
        let o = synth::execute(s).context("synth stage")?;
        working_set = working_set.max(o.working_set);
        watch.extend(prefixed("synth", o.stages));
    }
    let o = tokenize::execute(&config.tokenize).context("tokenize stage")?;
    working_set = working_set.max(o.working_set);
    watch.extend(prefixed("tokenize", o.stages));
    let o = score::execute(&config.score).context("score stage")?;
    working_set = working_set.max(o.working_set);
    watch.extend(prefixed("score", o.stages));
    let o = evaluate::execute(&config.evaluate).context("evaluate stage")?;
    working_set = working_set.max(o.working_set);
    watch.extend(prefixed("evaluate", o.stages));
    let (stages, total) = watch.into_stages();
    RunManifest::new("pipeline", &config, stages, total, working_set, o.volumes).write(&config.work_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> PipelineArgs {
        PipelineArgs {
            config: None,
            work_dir: None,
            seed: None,
            layers: None,
            proj_dim: None,
            k_frac: None,
            chunk_size: None,
            chunk_tokens: None,
            policy: None,
            overlays: false,
        }
    }

    #[test]
    fn flags_override_file_over_defaults() {
        let file: PipelineFile = toml::from_str("work_dir = \"/w\"\nseed = 3\nk_fraction = 0.2\nchunk_tokens = 64").unwrap();
        let mut f = flags();
        f.seed = Some(9);
        let c = resolve(file, &f).unwrap();
        assert_eq!(c.tokenize.seed, 9);
        assert_eq!(c.score.k_frac, 0.2);
        assert_eq!(c.score.chunk_tokens, 64);
        assert_eq!(c.score.policy, ExclusionPolicy::ConsistentAnomaly);
        assert_eq!(c.tokenize.proj_dim, 32);
        assert_eq!(c.tokenize.layers, vec![6, 12, 18, 24]);
        assert_eq!(c.evaluate.out, PathBuf::from("/w/eval"));
    }

    #[test]
    fn missing_paths_are_reported_together() {
        let file: PipelineFile = toml::from_str("source = \"features\"\nmasks_dir = \"/m\"").unwrap();
        let err = resolve(file, &flags()).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
        assert!(err.0.iter().any(|p| p.contains("work_dir")));
        assert!(err.0.iter().any(|p| p.contains("features_dir")));
        assert!(err.0.iter().any(|p| p.contains("gt_dir")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineFile>("wrok_dir = \"/w\"").is_err());
    }
}
