use std::collections::BTreeSet;

use rayon::prelude::*;
use voxscore::model::naming;
use voxscore::{build_projection, tokenize_volume, Axis, BrainMask, ScoreConfig, SliceFeatureStack};

use crate::args::TokenizeArgs;
use crate::error::ValidationError;
use crate::fsutil::{ensure_dir, file_names, missing, read, write};
use crate::manifest::{Outcome, RunManifest, Stopwatch, VolumeEntry};
use voxscore::Label;

pub fn config_of(a: &TokenizeArgs) -> ScoreConfig {
    ScoreConfig {
        layers: a.layers.clone(),
        patch_size: a.patch_size,
        proj_dim: a.proj_dim,
        seed: a.seed,
        mask_keep_threshold: a.mask_keep_threshold,
        renormalize_projected: a.renormalize,
        ..ScoreConfig::default()
    }
}

pub fn execute(a: &TokenizeArgs) -> anyhow::Result<Outcome> {
    let config = config_of(a);
    let mut problems = Vec::new();
    if let Err(e) = config.validate() {
        problems.push(e.to_string());
    }
    let names = file_names(&a.features_dir)?;
    let ids: BTreeSet<String> = names.iter().filter_map(|n| naming::parse_features(n)).map(|(id, _, _)| id).collect();
    if ids.is_empty() {
        problems.push(format!("no feature files in {}", a.features_dir.display()));
    }
    let mut expected = Vec::new();
    for id in &ids {
        expected.push(naming::mask(&a.masks_dir, id));
        for &layer in &a.layers {
            for axis in Axis::ALL {
                expected.push(naming::features(&a.features_dir, id, axis, layer));
            }
        }
    }
    problems.extend(missing(expected.iter().map(|p| p.as_path())));
    ValidationError::check(problems)?;

    let ids: Vec<String> = ids.into_iter().collect();
    let first = SliceFeatureStack::from_container(
        read(&naming::features(&a.features_dir, &ids[0], Axis::Axial, a.layers[0]))?,
        ids[0].clone(),
        Axis::Axial,
        a.layers[0],
    )?;
    if a.proj_dim > first.dim {
        return Err(ValidationError::single(format!(
            "proj-dim {} exceeds the feature width {}",
            a.proj_dim, first.dim
        ))
        .into());
    }
    let (size, grid, dim) = (first.size, first.grid, first.dim);
    drop(first);
    let projection = build_projection(dim, a.proj_dim, a.seed)?;
    ensure_dir(&a.out)?;

    let mut watch = Stopwatch::new();
    watch.time("tokenize", || {
        ids.par_iter().try_for_each(|id| -> anyhow::Result<()> {
            let mask = BrainMask::from_container(read(&naming::mask(&a.masks_dir, id))?)?;
            let mut keep = None;
            for &layer in &a.layers {
                let stacks = Axis::ALL
                    .iter()
                    .map(|&axis| {
                        let t = read(&naming::features(&a.features_dir, id, axis, layer))?;
                        Ok(SliceFeatureStack::from_container(t, id.clone(), axis, layer)?)
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?;
                let tokens = tokenize_volume(&stacks, layer, &mask, &projection, &config)
                    .map_err(|e| anyhow::anyhow!("volume {id} layer {layer}: {e}"))?;
                write(&naming::tokens(&a.out, id, layer), &tokens.tokens_container())?;
                keep.get_or_insert_with(|| tokens.keep_container());
            }
            write(&naming::keep(&a.out, id), &keep.expect("at least one layer"))
        })
    })?;
    log::info!("tokenize: {} volumes x {} layers -> {}", ids.len(), a.layers.len(), a.out.display());
    let (stages, _) = watch.into_stages();
    let stack_bytes = 3 * size * grid * grid * dim * 4;
    Ok(Outcome {
        stages,
        working_set: (rayon::current_num_threads() * (stack_bytes + size.pow(3))) as u64,
        volumes: ids
            .into_iter()
            .map(|volume_id| VolumeEntry {
                volume_id,
                label: Label::Unknown,
            })
            .collect(),
    })
}

pub fn run(a: &TokenizeArgs) -> anyhow::Result<()> {
    let watch = Stopwatch::new();
    let outcome = execute(a)?;
    let (_, total) = watch.into_stages();
    RunManifest::from_outcome("tokenize", a, outcome, total).write(&a.out)
}
