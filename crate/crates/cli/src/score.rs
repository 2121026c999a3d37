use std::collections::{BTreeMap, BTreeSet};

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use voxscore::mapping::AnomalyMap;
use voxscore::model::naming;
use voxscore::scorer::{score_in_chunks, ChunkScores, VolumeTokens};
use voxscore::{BrainMask, ExclusionPolicy, Label, ScoreConfig, TensorContainer, TokenCollection};

use crate::args::ScoreArgs;
use crate::error::ValidationError;
use crate::fsutil::{ensure_dir, file_names, missing, read, write, write_json};
use crate::manifest::{Outcome, RunManifest, Stopwatch, VolumeEntry};

#[derive(Debug, Serialize)]
struct ChunkEntry {
    volumes: Vec<String>,
    k: usize,
}

#[derive(Debug, Serialize)]
struct VolumeEntryScore {
    volume_id: String,
    score: f64,
    chunk: usize,
    /// (token, collection) pairs dropped by exclusion, per layer.
    excluded_pairs: Vec<usize>,
}

/// `scores.json`: everything needed to rank volumes, without timings.
#[derive(Debug, Serialize)]
struct ScoresFile {
    layers: Vec<u32>,
    k_fraction: f64,
    policy: ExclusionPolicy,
    chunk_size: Option<usize>,
    shuffle_seed: Option<u64>,
    clamped_tokens: usize,
    chunks: Vec<ChunkEntry>,
    volumes: Vec<VolumeEntryScore>,
}

pub fn config_of(a: &ScoreArgs, layers: Vec<u32>) -> ScoreConfig {
    ScoreConfig {
        layers,
        k_fraction: a.k_frac,
        chunk_tokens: a.chunk_tokens,
        exclusion_policy: a.policy,
        exclusion_top_fraction: a.exclusion_top_fraction,
        exclusion_links: a.exclusion_links,
        exclusion_gap_ratio: a.exclusion_gap_ratio,
        ..ScoreConfig::default()
    }
}

fn load(a: &ScoreArgs, id: &str, layers: &[u32]) -> anyhow::Result<VolumeTokens> {
    let collections = layers
        .iter()
        .map(|&layer| {
            let tokens = read(&naming::tokens(&a.tokens_dir, id, layer))?;
            let keep = read(&naming::keep(&a.tokens_dir, id))?;
            TokenCollection::from_containers(id, layer, tokens, keep).with_context(|| format!("tokens of {id} layer {layer}"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(VolumeTokens::new(id, collections)?)
}

fn grid_container(grid: usize, values: &[f32]) -> TensorContainer {
    TensorContainer::from_f32(&[grid; 3], values.to_vec()).expect("cubic map")
}

pub fn execute(a: &ScoreArgs) -> anyhow::Result<Outcome> {
    let mut problems = Vec::new();
    let present = a.tokens_dir.is_dir();
    let names = if present {
        file_names(&a.tokens_dir)?
    } else {
        problems.push(format!("{} is not a directory", a.tokens_dir.display()));
        Vec::new()
    };
    let mut found: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for (id, layer) in names.iter().filter_map(|n| naming::parse_tokens(n)) {
        found.entry(id).or_default().insert(layer);
    }
    let layers: Vec<u32> = match &a.layers {
        Some(l) => l.clone(),
        None => found.values().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let config = config_of(a, layers.clone());
    // Without a directory there are no layers to check yet.
    let checked = if present { config.clone() } else { config_of(a, ScoreConfig::default().layers) };
    if let Err(e) = checked.validate() {
        problems.push(e.to_string());
    }
    if present && found.len() < 2 {
        problems.push(format!("need at least 2 volumes in {}, found {}", a.tokens_dir.display(), found.len()));
    }
    if let Some(c) = a.chunk_size {
        if c < 2 {
            problems.push(format!("chunk size {c} is below 2"));
        }
    }
    let mut expected = Vec::new();
    for id in found.keys() {
        expected.push(naming::keep(&a.tokens_dir, id));
        for &layer in &layers {
            expected.push(naming::tokens(&a.tokens_dir, id, layer));
        }
        if let Some(m) = &a.masks_dir {
            expected.push(naming::mask(m, id));
        }
    }
    problems.extend(missing(expected.iter().map(|p| p.as_path())));
    ValidationError::check(problems)?;
    ensure_dir(&a.out)?;

    let ids: Vec<String> = found.into_keys().collect();
    let mut watch = Stopwatch::new();
    let volumes = watch.time("load", || ids.par_iter().map(|id| load(a, id, &layers)).collect::<anyhow::Result<Vec<_>>>())?;
    let chunk = a.chunk_size.unwrap_or(volumes.len()).min(volumes.len());
    let shuffle = a.chunk_size.and(a.shuffle_seed);
    let chunks: Vec<ChunkScores> = watch.time("score", || score_in_chunks(&volumes, &config, chunk, shuffle))?;

    let mut entries = Vec::with_capacity(ids.len());
    let mut chunk_entries = Vec::with_capacity(chunks.len());
    let mut clamped_tokens = 0;
    watch.time("write_maps", || -> anyhow::Result<()> {
        for (c, ch) in chunks.iter().enumerate() {
            clamped_tokens += ch.scores.clamped_tokens;
            chunk_entries.push(ChunkEntry {
                volumes: ch.members.iter().map(|&m| ids[m].clone()).collect(),
                k: ch.scores.k,
            });
            for v in &ch.scores.volumes {
                for m in &v.layer_maps {
                    write(&naming::layer_map(&a.out, &v.volume_id, m.layer), &grid_container(m.grid, &m.scores))?;
                }
                write(&naming::coarse_map(&a.out, &v.volume_id), &grid_container(v.grid, &v.coarse))?;
                entries.push(VolumeEntryScore {
                    volume_id: v.volume_id.clone(),
                    score: v.patient.score,
                    chunk: c,
                    excluded_pairs: v.excluded_pairs.clone(),
                });
            }
        }
        Ok(())
    })?;

    if let Some(masks_dir) = &a.masks_dir {
        let all: Vec<_> = chunks.iter().flat_map(|c| &c.scores.volumes).collect();
        watch.time("upsample", || {
            all.par_iter().try_for_each(|v| -> anyhow::Result<()> {
                let mask = BrainMask::from_container(read(&naming::mask(masks_dir, &v.volume_id))?)?;
                let map = AnomalyMap::build(&v.volume_id, v.grid, v.coarse.clone(), &mask)
                    .with_context(|| format!("upsampling {}", v.volume_id))?;
                write(&naming::full_map(&a.out, &v.volume_id), &map.full.to_container())
            })
        })?;
    }

    entries.sort_by(|x, y| x.volume_id.cmp(&y.volume_id));
    let file = ScoresFile {
        layers,
        k_fraction: a.k_frac,
        policy: a.policy,
        chunk_size: a.chunk_size,
        shuffle_seed: shuffle,
        clamped_tokens,
        chunks: chunk_entries,
        volumes: entries,
    };
    write_json(&a.out.join("scores.json"), &file)?;
    log::info!("score: {} volumes in {} chunk(s) -> {}", ids.len(), chunks.len(), a.out.display());

    let (stages, _) = watch.into_stages();
    let (n, dim) = volumes
        .first()
        .and_then(|v| v.layers.first())
        .map_or((0, 0), |c| (c.len(), c.dim));
    let b = volumes.len();
    let resident = b * config.layers.len() * n * (dim * 4 + 1);
    let cross = chunk * n * chunk * 4;
    Ok(Outcome {
        stages,
        working_set: (resident + cross) as u64,
        volumes: ids
            .into_iter()
            .map(|volume_id| VolumeEntry {
                volume_id,
                label: Label::Unknown,
            })
            .collect(),
    })
}

pub fn run(a: &ScoreArgs) -> anyhow::Result<()> {
    let watch = Stopwatch::new();
    let outcome = execute(a)?;
    let (_, total) = watch.into_stages();
    RunManifest::from_outcome("score", a, outcome, total).write(&a.out)
}
