use serde::Serialize;

use crate::model::{idx3, BrainMask};

/// Component labels over a cubic grid: 0 is background, components are
/// numbered from 1 in order of their first voxel in `(x, y, z)` scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub size: usize,
    pub labels: Vec<u32>,
    pub count: u32,
}

impl Labeling {
    /// Voxel count of each component, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count as usize];
        for &l in &self.labels {
            if l != 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let grand = parent[parent[a as usize] as usize];
        parent[a as usize] = grand;
        a = grand;
    }
    a
}

/// 26-connected component labeling (two-pass union-find).
pub fn connected_components_3d(mask: &BrainMask) -> Labeling {
    let n = mask.size;
    let mut provisional = vec![0u32; mask.data.len()];
    let mut parent: Vec<u32> = vec![0];
    // The 13 neighbours already visited in scan order.
    let mut back = Vec::with_capacity(13);
    for dx in -1i64..=0 {
        for dy in -1i64..=1 {
            for dz in -1i64..=1 {
                if (dx, dy, dz) < (0, 0, 0) {
                    back.push((dx, dy, dz));
                }
            }
        }
    }
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let here = idx3(n, x, y, z);
                if mask.data[here] == 0 {
                    continue;
                }
                let mut label = 0u32;
                for &(dx, dy, dz) in &back {
                    let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if nx < 0 || ny < 0 || nz < 0 || ny >= n as i64 || nz >= n as i64 {
                        continue;
                    }
                    let l = provisional[idx3(n, nx as usize, ny as usize, nz as usize)];
                    if l == 0 {
                        continue;
                    }
                    if label == 0 {
                        label = find(&mut parent, l);
                    } else {
                        let (ra, rb) = (find(&mut parent, label), find(&mut parent, l));
                        if ra != rb {
                            let (lo, hi) = (ra.min(rb), ra.max(rb));
                            parent[hi as usize] = lo;
                            label = lo;
                        }
                    }
                }
                if label == 0 {
                    label = parent.len() as u32;
                    parent.push(label);
                }
                provisional[here] = label;
            }
        }
    }
    // Final labels in order of first appearance.
    let mut remap = vec![0u32; parent.len()];
    let mut count = 0;
    let labels = provisional
        .into_iter()
        .map(|l| {
            if l == 0 {
                return 0;
            }
            let root = find(&mut parent, l) as usize;
            if remap[root] == 0 {
                count += 1;
                remap[root] = count;
            }
            remap[root]
        })
        .collect();
    Labeling { size: n, labels, count }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LesionStats {
    pub volume_id: String,
    pub lesion_id: u32,
    pub voxel_count: usize,
    pub volume_mm3: f64,
    pub detected: bool,
}

/// One row per ground-truth lesion; a lesion is detected when any of its
/// voxels is predicted positive.
pub fn lesion_stats(volume_id: &str, gt: &BrainMask, predicted: &BrainMask, spacing_mm: f64) -> Vec<LesionStats> {
    let labeling = connected_components_3d(gt);
    let mut detected = vec![false; labeling.count as usize];
    for (&l, &p) in labeling.labels.iter().zip(&predicted.data) {
        if l != 0 && p != 0 {
            detected[l as usize - 1] = true;
        }
    }
    let voxel_mm3 = spacing_mm.powi(3);
    labeling
        .sizes()
        .into_iter()
        .zip(detected)
        .enumerate()
        .map(|(i, (voxel_count, detected))| LesionStats {
            volume_id: volume_id.to_string(),
            lesion_id: i as u32 + 1,
            voxel_count,
            volume_mm3: voxel_count as f64 * voxel_mm3,
            detected,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LtprBin {
    pub min_mm3: f64,
    /// `None` for the open-ended top bin.
    pub max_mm3: Option<f64>,
    pub lesions: usize,
    pub detected: usize,
    /// `None` when the bin is empty.
    pub ltpr: Option<f64>,
}

pub const DEFAULT_BIN_EDGES_MM3: [f64; 2] = [100.0, 1000.0];

/// Lesion-wise true positive rate per volume bin. `edges` split
/// `[0, ∞)` into `[0, e₀), [e₀, e₁), …, [e_last, ∞)`.
pub fn ltpr(lesions: &[LesionStats], edges: &[f64]) -> Vec<LtprBin> {
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(edges);
    (0..bounds.len())
        .map(|b| {
            let lo = bounds[b];
            let hi = bounds.get(b + 1).copied();
            let members: Vec<&LesionStats> = lesions
                .iter()
                .filter(|l| l.volume_mm3 >= lo && hi.is_none_or(|h| l.volume_mm3 < h))
                .collect();
            let detected = members.iter().filter(|l| l.detected).count();
            LtprBin {
                min_mm3: lo,
                max_mm3: hi,
                lesions: members.len(),
                detected,
                ltpr: (!members.is_empty()).then(|| detected as f64 / members.len() as f64),
            }
        })
        .collect()
}
