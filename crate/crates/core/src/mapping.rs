//! Coarse token maps to full-resolution voxel maps.
//!
//! Upsampling is cell-centred trilinear interpolation. Output voxel `i` along
//! an axis samples source coordinate
//!
//! ```text
//! s = clamp((i + 0.5) · N_p / H − 0.5, 0, N_p − 1)
//! ```
//!
//! so token centres sit at the middle of their `p`-voxel blocks. Weights are
//! evaluated in `f64` and the result rounded once to `f32`.

use thiserror::Error;

use crate::model::{idx3, BrainMask, Volume};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("target edge {size} is not a positive multiple of grid {grid}")]
    NotMultiple { size: usize, grid: usize },
    #[error("coarse map holds {found} values, expected {expected}")]
    CoarseLen { expected: usize, found: usize },
    #[error("map edge {map} does not match mask edge {mask}")]
    DimMismatch { map: usize, mask: usize },
}

/// Per-volume anomaly map at token and voxel resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub volume_id: String,
    pub grid: usize,
    pub coarse: Vec<f32>,
    pub full: Volume,
    pub threshold: Option<f32>,
}

impl AnomalyMap {
    /// Upsamples `coarse` to the mask's resolution and zeroes background.
    pub fn build(volume_id: impl Into<String>, grid: usize, coarse: Vec<f32>, mask: &BrainMask) -> Result<Self, MapError> {
        let full = zero_background(upsample_trilinear(&coarse, grid, mask.size)?, mask)?;
        Ok(Self {
            volume_id: volume_id.into(),
            grid,
            coarse,
            full,
            threshold: None,
        })
    }
}

/// Lower source index and weight of the upper neighbour for each output index.
fn axis_weights(grid: usize, size: usize) -> Vec<(usize, usize, f64)> {
    let scale = grid as f64 / size as f64;
    let max = (grid - 1) as f64;
    (0..size)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(grid - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn upsample_trilinear(coarse: &[f32], grid: usize, size: usize) -> Result<Volume, MapError> {
    if grid == 0 || size == 0 || !size.is_multiple_of(grid) {
        return Err(MapError::NotMultiple { size, grid });
    }
    if coarse.len() != grid.pow(3) {
        return Err(MapError::CoarseLen {
            expected: grid.pow(3),
            found: coarse.len(),
        });
    }
    let w = axis_weights(grid, size);
    let at = |x, y, z| coarse[idx3(grid, x, y, z)] as f64;
    let mut out = Volume::zeros(size);
    for (x, &(x0, x1, fx)) in w.iter().enumerate() {
        for (y, &(y0, y1, fy)) in w.iter().enumerate() {
            for (z, &(z0, z1, fz)) in w.iter().enumerate() {
                let c00 = at(x0, y0, z0) * (1.0 - fz) + at(x0, y0, z1) * fz;
                let c01 = at(x0, y1, z0) * (1.0 - fz) + at(x0, y1, z1) * fz;
                let c10 = at(x1, y0, z0) * (1.0 - fz) + at(x1, y0, z1) * fz;
                let c11 = at(x1, y1, z0) * (1.0 - fz) + at(x1, y1, z1) * fz;
                let c0 = c00 * (1.0 - fy) + c01 * fy;
                let c1 = c10 * (1.0 - fy) + c11 * fy;
                out.data[idx3(size, x, y, z)] = (c0 * (1.0 - fx) + c1 * fx) as f32;
            }
        }
    }
    Ok(out)
}

pub fn zero_background(mut full: Volume, mask: &BrainMask) -> Result<Volume, MapError> {
    if full.size != mask.size {
        return Err(MapError::DimMismatch {
            map: full.size,
            mask: mask.size,
        });
    }
    for (v, &m) in full.data.iter_mut().zip(&mask.data) {
        if m == 0 {
            *v = 0.0;
        }
    }
    Ok(full)
}
