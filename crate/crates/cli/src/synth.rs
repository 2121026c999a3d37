use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use voxscore::model::naming;
use voxscore::synth::{extract_all_axes, generate_dataset, SynthError, SynthSpec};

use crate::args::SynthArgs;
use crate::error::ValidationError;
use crate::fsutil::{ensure_dir, write};
use crate::manifest::{Outcome, RunManifest, Stopwatch, VolumeEntry};

pub fn spec_of(a: &SynthArgs) -> SynthSpec {
    SynthSpec {
        size: a.size,
        patch: a.patch_size,
        n_normal: a.n_normal,
        n_anomalous: a.n_anomalous,
        lesion_radius: (a.lesion_radius_min, a.lesion_radius_max),
        lesion_delta: a.lesion_delta,
        texture_seed: a.texture_seed,
        encoder_seed: a.encoder_seed,
        feature_dim: a.feature_dim,
        spacing_mm: a.spacing,
    }
}

/// Subdirectories of a synthetic dataset root.
pub struct DataDirs<'a>(pub &'a Path);

impl DataDirs<'_> {
    pub fn features(&self) -> std::path::PathBuf {
        self.0.join("features")
    }
    pub fn masks(&self) -> std::path::PathBuf {
        self.0.join("masks")
    }
    pub fn gt(&self) -> std::path::PathBuf {
        self.0.join("gt")
    }
    pub fn volumes(&self) -> std::path::PathBuf {
        self.0.join("volumes")
    }
    pub fn meta(&self) -> std::path::PathBuf {
        self.0.join("meta")
    }
}

pub fn execute(a: &SynthArgs) -> anyhow::Result<Outcome> {
    let spec = spec_of(a);
    let mut problems = Vec::new();
    if let Err(e) = spec.validate() {
        problems.push(e.to_string());
    }
    if a.layers.is_empty() {
        problems.push("at least one layer is required".into());
    }
    ValidationError::check(problems)?;

    let dirs = DataDirs(&a.out);
    for d in [dirs.features(), dirs.masks(), dirs.gt(), dirs.volumes(), dirs.meta()] {
        ensure_dir(&d)?;
    }
    let mut watch = Stopwatch::new();
    let dataset = watch.time("generate", || generate_dataset(&spec)).map_err(|e| match e {
        SynthError::LesionDoesNotFit(_) => anyhow::Error::new(ValidationError::single(e.to_string())),
        other => other.into(),
    })?;
    watch.time("write_volumes", || -> anyhow::Result<()> {
        for v in &dataset {
            let id = &v.meta.volume_id;
            write(&naming::volume(&dirs.volumes(), id), &v.volume.to_container())?;
            write(&naming::mask(&dirs.masks(), id), &v.mask.to_container())?;
            write(&naming::ground_truth(&dirs.gt(), id), &v.ground_truth.to_container())?;
            v.meta.write(naming::meta(&dirs.meta(), id)).with_context(|| format!("writing metadata of {id}"))?;
        }
        Ok(())
    })?;
    let features = dirs.features();
    watch.time("extract", || -> anyhow::Result<()> {
        for &layer in &a.layers {
            let encoder = spec.encoder(layer);
            dataset.par_iter().try_for_each(|v| -> anyhow::Result<()> {
                let id = &v.meta.volume_id;
                for stack in extract_all_axes(&encoder, id, &v.volume, layer)? {
                    write(&naming::features(&features, id, stack.axis, layer), &stack.to_container())?;
                }
                Ok(())
            })?;
        }
        Ok(())
    })?;
    log::info!("synth: wrote {} volumes, {} layers to {}", dataset.len(), a.layers.len(), a.out.display());
    let grid = spec.size / spec.patch;
    let (stages, _) = watch.into_stages();
    Ok(Outcome {
        stages,
        working_set: (dataset.len() * spec.size.pow(3) * 6 + rayon::current_num_threads() * 3 * spec.size * grid * grid * spec.feature_dim * 4) as u64,
        volumes: dataset
            .iter()
            .map(|v| VolumeEntry {
                volume_id: v.meta.volume_id.clone(),
                label: v.meta.label,
            })
            .collect(),
    })
}

pub fn run(a: &SynthArgs) -> anyhow::Result<()> {
    let watch = Stopwatch::new();
    let outcome = execute(a)?;
    let (_, total) = watch.into_stages();
    RunManifest::from_outcome("synth", a, outcome, total).write(&a.out)
}
