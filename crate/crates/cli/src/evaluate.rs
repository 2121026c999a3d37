use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use rayon::prelude::*;
use serde::Deserialize;
use voxscore::metrics::{evaluate, EvalOptions, EvalReport, EvalVolume, LesionStats};
use voxscore::model::naming;
use voxscore::{BrainMask, Label, Volume, VolumeMeta};

use crate::args::EvaluateArgs;
use crate::error::ValidationError;
use crate::fsutil::{ensure_dir, file_names, missing, read, write_json};
use crate::manifest::{Outcome, RunManifest, Stopwatch, VolumeEntry};
use crate::overlay;

#[derive(Debug, Deserialize)]
struct ScoredVolume {
    volume_id: String,
    score: f64,
}

#[derive(Debug, Deserialize)]
struct ScoresFile {
    volumes: Vec<ScoredVolume>,
}

fn lesion_csv(lesions: &[LesionStats]) -> String {
    let mut out = String::from("volume_id,lesion_id,voxel_count,volume_mm3,detected\n");
    for l in lesions {
        let _ = writeln!(out, "{},{},{},{:.3},{}", l.volume_id, l.lesion_id, l.voxel_count, l.volume_mm3, l.detected);
    }
    out
}

pub fn summary_table(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "volumes            {} ({} anomalous)", r.volumes, r.anomalous_volumes);
    let _ = writeln!(s, "patient AUROC      {:.4}", r.patient_auroc);
    let _ = writeln!(s, "patient AP         {:.4}", r.patient_ap);
    let _ = writeln!(s, "voxel AUROC        {:.4}", r.voxel_auroc);
    let _ = writeln!(s, "voxel AP           {:.4}", r.voxel_ap);
    let _ = writeln!(s, "Dice max           {:.4} (threshold {:.4})", r.dice_max, r.dice_threshold);
    let _ = writeln!(s, "IoU at Dice max    {:.4}", r.iou_at_dice_max);
    for b in &r.ltpr_bins {
        let range = match b.max_mm3 {
            Some(hi) => format!("[{}, {}) mm³", b.min_mm3, hi),
            None => format!("[{}, ∞) mm³", b.min_mm3),
        };
        let rate = b.ltpr.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(s, "LTPR {range:<18} {rate} ({}/{})", b.detected, b.lesions);
    }
    s
}

struct Inputs {
    ids: Vec<String>,
    scores: BTreeMap<String, f64>,
    metas: BTreeMap<String, VolumeMeta>,
    spacing: f64,
}

fn validate(a: &EvaluateArgs) -> anyhow::Result<Inputs> {
    let names = file_names(&a.maps_dir)?;
    let ids: Vec<String> = names.iter().filter_map(|n| naming::strip(n, "map")).collect();
    let mut problems = Vec::new();
    if ids.is_empty() {
        problems.push(format!("no *_map.vxtk files in {}", a.maps_dir.display()));
    }
    let mut expected: Vec<PathBuf> = Vec::new();
    for id in &ids {
        expected.push(naming::ground_truth(&a.gt_dir, id));
        expected.push(naming::mask(&a.masks_dir, id));
        if let Some(m) = &a.meta_dir {
            expected.push(naming::meta(m, id));
        }
        if let Some(v) = &a.volumes_dir {
            expected.push(naming::volume(v, id));
        }
    }
    problems.extend(missing(expected.iter().map(|p| p.as_path())));

    let scores_path = a.scores.clone().unwrap_or_else(|| a.maps_dir.join("scores.json"));
    let mut scores = BTreeMap::new();
    match fs::read_to_string(&scores_path) {
        Ok(text) => match serde_json::from_str::<ScoresFile>(&text) {
            Ok(f) => scores.extend(f.volumes.into_iter().map(|v| (v.volume_id, v.score))),
            Err(e) => problems.push(format!("{}: {e}", scores_path.display())),
        },
        Err(_) => problems.push(format!("missing {}", scores_path.display())),
    }
    if !scores.is_empty() {
        problems.extend(ids.iter().filter(|id| !scores.contains_key(*id)).map(|id| format!("no patient score for {id}")));
    }
    if !(a.spacing.is_none_or(|s| s > 0.0)) {
        problems.push(format!("spacing must be positive, got {:?}", a.spacing));
    }
    if a.n_thresholds == 0 {
        problems.push("n-thresholds must be positive".into());
    }
    ValidationError::check(problems)?;

    let mut metas = BTreeMap::new();
    if let Some(dir) = &a.meta_dir {
        for id in &ids {
            let m = VolumeMeta::read(naming::meta(dir, id)).with_context(|| format!("metadata of {id}"))?;
            metas.insert(id.clone(), m);
        }
    }
    let spacing = match a.spacing {
        Some(s) => s,
        None => {
            let mut sp: Vec<f64> = metas.values().map(|m| m.voxel_spacing_mm).collect();
            sp.dedup();
            match sp.as_slice() {
                [] => voxscore::model::DEFAULT_SPACING_MM,
                [one] => *one,
                _ => return Err(ValidationError::single("voxel spacing differs across volumes; pass --spacing").into()),
            }
        }
    };
    Ok(Inputs {
        ids,
        scores,
        metas,
        spacing,
    })
}

fn load(a: &EvaluateArgs, inputs: &Inputs, id: &str) -> anyhow::Result<Result<EvalVolume, String>> {
    let map = Volume::from_container(read(&naming::full_map(&a.maps_dir, id))?)?;
    let gt = BrainMask::from_container(read(&naming::ground_truth(&a.gt_dir, id))?)?;
    let mask = BrainMask::from_container(read(&naming::mask(&a.masks_dir, id))?)?;
    if map.size != gt.size || map.size != mask.size {
        return Ok(Err(format!(
            "{id}: map edge {}, ground truth edge {}, mask edge {}",
            map.size, gt.size, mask.size
        )));
    }
    let label = inputs.metas.get(id).map_or(Label::Unknown, |m| m.label);
    let anomalous = match label {
        Label::Anomalous => true,
        Label::Normal => false,
        Label::Unknown => gt.count() > 0,
    };
    Ok(Ok(EvalVolume {
        volume_id: id.to_string(),
        map,
        ground_truth: gt,
        mask,
        patient_score: inputs.scores[id],
        anomalous,
    }))
}

pub fn execute(a: &EvaluateArgs) -> anyhow::Result<Outcome> {
    let inputs = validate(a)?;
    ensure_dir(&a.out)?;
    let mut watch = Stopwatch::new();
    let loaded = watch.time("load", || inputs.ids.par_iter().map(|id| load(a, &inputs, id)).collect::<anyhow::Result<Vec<_>>>())?;
    let mut volumes = Vec::with_capacity(loaded.len());
    let mut problems = Vec::new();
    for v in loaded {
        match v {
            Ok(v) => volumes.push(v),
            Err(p) => problems.push(p),
        }
    }
    ValidationError::check(problems)?;

    let options = EvalOptions {
        n_thresholds: a.n_thresholds,
        include_background: a.include_background,
        spacing_mm: inputs.spacing,
        ltpr_threshold: a.ltpr_threshold,
        ..EvalOptions::default()
    };
    let (report, lesions) = watch
        .time("evaluate", || evaluate(&volumes, &options))
        .map_err(|e| ValidationError::single(format!("cannot evaluate: {e}")))?;
    write_json(&a.out.join("report.json"), &report)?;
    fs::write(a.out.join("lesions.csv"), lesion_csv(&lesions)).context("writing lesions.csv")?;

    if a.overlays {
        let dir = a.out.join("overlays");
        ensure_dir(&dir)?;
        watch.time("overlays", || {
            volumes.par_iter().try_for_each(|v| -> anyhow::Result<()> {
                let background = match &a.volumes_dir {
                    Some(d) => Some(Volume::from_container(read(&naming::volume(d, &v.volume_id))?)?),
                    None => None,
                };
                let img = overlay::render(background.as_ref(), &v.map, &v.ground_truth, report.ltpr_threshold);
                let path = dir.join(format!("{}.png", v.volume_id));
                img.save(&path).with_context(|| format!("writing {}", path.display()))
            })
        })?;
    }
    print!("{}", summary_table(&report));

    let (stages, _) = watch.into_stages();
    let voxels: usize = volumes.iter().map(|v| v.map.data.len()).sum();
    Ok(Outcome {
        stages,
        // Maps, masks and the pooled score/label copies.
        working_set: (voxels * (4 + 1 + 1 + 4 + 1)) as u64,
        volumes: volumes
            .iter()
            .map(|v| VolumeEntry {
                volume_id: v.volume_id.clone(),
                label: if v.anomalous { Label::Anomalous } else { Label::Normal },
            })
            .collect(),
    })
}

pub fn run(a: &EvaluateArgs) -> anyhow::Result<()> {
    let watch = Stopwatch::new();
    let outcome = execute(a)?;
    let (_, total) = watch.into_stages();
    RunManifest::from_outcome("evaluate", a, outcome, total).write(&a.out)
}
