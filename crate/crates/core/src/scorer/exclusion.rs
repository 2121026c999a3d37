//! Consistent-anomaly exclusion.
//!
//! Anomalies that repeat across volumes become each other's nearest
//! neighbours and score low. This module detects strongly linked collection
//! pairs and drops them from the MSVs of the suspicious tokens.
//!
//! This is a stand-in heuristic, not the graph procedure of the published
//! consistent-anomaly method:
//!
//! 1. Score every kept token with no exclusion.
//! 2. Per collection, take the top `q` fraction of tokens by that score
//!    (at least one; ties go to the lexicographically smaller `(x, y, z)`).
//! 3. For each such token find the single collection holding its nearest
//!    neighbour (ties go to the lower batch index). The token only points
//!    there when that distance is at most `gap_ratio` times the
//!    second-nearest, i.e. when one collection stands out as a near copy.
//! 4. Link weight `w(i, j)` is the mean of the fraction of `i`'s top tokens
//!    pointing at `j` and the fraction of `j`'s top tokens pointing at `i`.
//! 5. Each collection excludes its `e` most strongly linked partners from the
//!    MSVs of its top tokens. Only mutual links count (both fractions
//!    positive), and at most `B − 2` partners are dropped.

use serde::Serialize;

use super::kernel::CrossTable;
use super::msv::prefix_mean;

/// Exclusions applied to one query collection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VolumeExclusion {
    /// Flat token indices whose MSVs skip `excluded`, ascending.
    pub tokens: Vec<usize>,
    /// Batch indices of the excluded collections, ascending.
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExclusionMap {
    pub per_volume: Vec<VolumeExclusion>,
}

impl ExclusionMap {
    pub fn none(batch: usize) -> Self {
        Self {
            per_volume: vec![VolumeExclusion::default(); batch],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.per_volume.iter().all(|v| v.tokens.is_empty() || v.excluded.is_empty())
    }

    /// Collections skipped by token `flat` of collection `owner`.
    pub fn excluded_for(&self, owner: usize, flat: usize) -> &[usize] {
        match self.per_volume.get(owner) {
            Some(v) if v.tokens.binary_search(&flat).is_ok() => &v.excluded,
            _ => &[],
        }
    }

    /// Number of (token, collection) pairs removed from MSVs of `owner`.
    pub fn pair_count(&self, owner: usize) -> usize {
        self.per_volume
            .get(owner)
            .map_or(0, |v| v.tokens.len() * v.excluded.len())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ExclusionParams {
    pub k: usize,
    pub top_fraction: f64,
    pub links: Option<usize>,
    pub gap_ratio: f64,
}

pub(crate) fn default_links(batch: usize) -> usize {
    ((0.1 * batch as f64).round() as usize).max(1)
}

/// Sorted distances of one table row, skipping the owner.
pub(crate) fn sorted_row(row: &[f32], owner: usize, excluded: &[usize], out: &mut Vec<f32>) {
    out.clear();
    out.extend(
        row.iter()
            .enumerate()
            .filter(|&(j, _)| j != owner && !excluded.contains(&j))
            .map(|(_, &d)| d),
    );
    out.sort_by(f32::total_cmp);
}

pub(crate) fn from_table(table: &CrossTable, flat: &[Vec<usize>], params: ExclusionParams) -> ExclusionMap {
    let b = table.batch;
    if b < 3 {
        return ExclusionMap::none(b);
    }
    let mut buf = Vec::with_capacity(b);
    let mut pointers = vec![vec![0usize; b]; b];
    let mut top_tokens: Vec<Vec<usize>> = Vec::with_capacity(b);
    let mut top_counts = Vec::with_capacity(b);

    for i in 0..b {
        let n = flat[i].len();
        let mut scored: Vec<(f64, usize)> = (0..n)
            .map(|t| {
                sorted_row(table.row(i, t), i, &[], &mut buf);
                (prefix_mean(&buf, params.k), t)
            })
            .collect();
        // Highest score first; ties by packed position, which follows (x, y, z).
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let m = ((params.top_fraction * n as f64).round() as usize).clamp(1, n.max(1)).min(n);
        let top: Vec<usize> = scored[..m].iter().map(|&(_, t)| t).collect();
        for &t in &top {
            let row = table.row(i, t);
            let nn = (0..b)
                .filter(|&j| j != i)
                .min_by(|&a, &c| row[a].total_cmp(&row[c]).then(a.cmp(&c)))
                .expect("batch has other collections");
            let second = (0..b)
                .filter(|&j| j != i && j != nn)
                .map(|j| row[j])
                .min_by(f32::total_cmp)
                .expect("batch of three or more");
            if row[nn] as f64 <= params.gap_ratio * second as f64 {
                pointers[i][nn] += 1;
            }
        }
        top_counts.push(m);
        top_tokens.push(top);
    }

    let fraction = |i: usize, j: usize| {
        if top_counts[i] == 0 {
            0.0
        } else {
            pointers[i][j] as f64 / top_counts[i] as f64
        }
    };
    let links = params.links.unwrap_or_else(|| default_links(b)).min(b - 2);

    let per_volume = (0..b)
        .map(|i| {
            let mut partners: Vec<(f64, usize)> = (0..b)
                .filter(|&j| j != i)
                .filter(|&j| fraction(i, j) > 0.0 && fraction(j, i) > 0.0)
                .map(|j| ((fraction(i, j) + fraction(j, i)) / 2.0, j))
                .collect();
            partners.sort_by(|a, c| c.0.total_cmp(&a.0).then(a.1.cmp(&c.1)));
            let mut excluded: Vec<usize> = partners.into_iter().take(links).map(|(_, j)| j).collect();
            excluded.sort_unstable();
            if excluded.is_empty() {
                return VolumeExclusion::default();
            }
            let mut tokens: Vec<usize> = top_tokens[i].iter().map(|&t| flat[i][t]).collect();
            tokens.sort_unstable();
            VolumeExclusion { tokens, excluded }
        })
        .collect();
    ExclusionMap { per_volume }
}
