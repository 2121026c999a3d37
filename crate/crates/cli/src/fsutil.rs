use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use voxscore::{read_container, write_container, TensorContainer};

use crate::error::ValidationError;

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// File names in `dir`, sorted. A missing directory is a validation error.
pub fn file_names(dir: &Path) -> anyhow::Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(ValidationError::single(format!("{} is not a directory", dir.display())).into());
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            if let Some(name) = entry.file_name().to_str() {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn read(path: &Path) -> anyhow::Result<TensorContainer> {
    read_container(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write(path: &Path, t: &TensorContainer) -> anyhow::Result<()> {
    write_container(t, path).with_context(|| format!("writing {}", path.display()))
}

/// Paths among `paths` that do not exist, as display strings.
pub fn missing<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Vec<String> {
    paths
        .into_iter()
        .filter(|p| !p.is_file())
        .map(|p| format!("missing {}", p.display()))
        .collect()
}
