use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use voxscore::Label;

use crate::fsutil::write_json;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeEntry {
    pub volume_id: String,
    pub label: Label,
}

/// Provenance of one run: configuration, stage timings, memory and inputs.
/// Kept apart from scores and reports so those stay byte-reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config: serde_json::Value,
    pub threads: usize,
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
    /// High-water resident set size reported by the OS, when available.
    pub peak_rss_bytes: Option<u64>,
    /// Analytic size of the largest buffers the stages hold at once.
    pub working_set_estimate_bytes: u64,
    pub volumes: Vec<VolumeEntry>,
}

pub struct Stopwatch {
    start: Instant,
    stages: Vec<StageTiming>,
}

impl Stopwatch {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            stages: Vec::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn extend(&mut self, stages: Vec<StageTiming>) {
        self.stages.extend(stages);
    }

    pub fn into_stages(self) -> (Vec<StageTiming>, f64) {
        (self.stages, self.start.elapsed().as_secs_f64())
    }
}

fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Result of one stage, to be folded into a manifest.
pub struct Outcome {
    pub stages: Vec<StageTiming>,
    pub working_set: u64,
    pub volumes: Vec<VolumeEntry>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, stages: Vec<StageTiming>, total_seconds: f64, working_set: u64, volumes: Vec<VolumeEntry>) -> Self {
        Self {
            tool: format!("voxscore {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            threads: rayon::current_num_threads(),
            stages,
            total_seconds,
            peak_rss_bytes: peak_rss_bytes(),
            working_set_estimate_bytes: working_set,
            volumes,
        }
    }

    pub fn from_outcome(command: &str, config: &impl Serialize, outcome: Outcome, total_seconds: f64) -> Self {
        Self::new(command, config, outcome.stages, total_seconds, outcome.working_set, outcome.volumes)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        write_json(&dir.join("manifest.json"), self).context("writing manifest")
    }
}
