//! Tiled brute-force nearest-token distances.
//!
//! Squared distances use the Gram identity `‖a−b‖² = ‖a‖² + ‖b‖² − 2a·b` in
//! `f64`, clamped at zero. Norms go through the same `dot` as cross terms, so
//! bit-identical tokens are exactly zero apart. Each pair's value is computed
//! the same way regardless of tile size, and the per-query minimum does not
//! depend on visit order, so results are identical for any tiling or thread
//! count.

use rayon::prelude::*;

use crate::model::TokenCollection;

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] as f64 * y[0] as f64;
        acc[1] += x[1] as f64 * y[1] as f64;
        acc[2] += x[2] as f64 * y[2] as f64;
        acc[3] += x[3] as f64 * y[3] as f64;
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Kept tokens of one collection packed contiguously, with squared norms.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub dim: usize,
    pub rows: Vec<f32>,
    pub norms: Vec<f64>,
    /// Flat grid index of each packed row.
    pub flat: Vec<usize>,
}

impl Prepared {
    pub fn new(c: &TokenCollection) -> Self {
        let flat: Vec<usize> = c.kept_indices().collect();
        let mut rows = Vec::with_capacity(flat.len() * c.dim);
        for &i in &flat {
            rows.extend_from_slice(c.token(i));
        }
        Self::from_rows(c.dim, rows, flat)
    }

    pub fn from_rows(dim: usize, rows: Vec<f32>, flat: Vec<usize>) -> Self {
        let norms = rows.chunks_exact(dim).map(|r| dot(r, r)).collect();
        Self { dim, rows, norms, flat }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
pub(crate) fn gram_sq(a: &[f32], na: f64, b: &[f32], nb: f64) -> f64 {
    (na + nb - 2.0 * dot(a, b)).max(0.0)
}

/// Minimum squared distance from every query row to any target row.
pub(crate) fn nearest_sq(query: &Prepared, target: &Prepared, tile: usize) -> Vec<f64> {
    let tile = tile.max(1);
    let mut best = vec![f64::INFINITY; query.len()];
    for q0 in (0..query.len()).step_by(tile) {
        let q1 = (q0 + tile).min(query.len());
        for t0 in (0..target.len()).step_by(tile) {
            let t1 = (t0 + tile).min(target.len());
            for q in q0..q1 {
                let (a, na) = (query.row(q), query.norms[q]);
                let mut m = best[q];
                for t in t0..t1 {
                    let d = gram_sq(a, na, target.row(t), target.norms[t]);
                    if d < m {
                        m = d;
                    }
                }
                best[q] = m;
            }
        }
    }
    best
}

/// `rows[i]` is `[n_i, B]` row-major: entry `(t, j)` is the distance from
/// kept token `t` of collection `i` to collection `j`. The diagonal `j == i`
/// holds `+∞` and is never read as a distance.
#[derive(Debug, Clone)]
pub(crate) struct CrossTable {
    pub batch: usize,
    pub rows: Vec<Vec<f32>>,
}

impl CrossTable {
    pub fn compute(prepared: &[Prepared], tile: usize) -> Self {
        let b = prepared.len();
        let pairs: Vec<(usize, usize)> = (0..b)
            .flat_map(|i| (0..b).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let columns: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(i, j)| nearest_sq(&prepared[i], &prepared[j], tile))
            .collect();
        let mut rows: Vec<Vec<f32>> = prepared
            .iter()
            .map(|p| vec![f32::INFINITY; p.len() * b])
            .collect();
        for (&(i, j), col) in pairs.iter().zip(columns) {
            for (t, d) in col.into_iter().enumerate() {
                rows[i][t * b + j] = d.sqrt() as f32;
            }
        }
        Self { batch: b, rows }
    }

    pub fn row(&self, i: usize, t: usize) -> &[f32] {
        &self.rows[i][t * self.batch..(t + 1) * self.batch]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_size_does_not_change_minimum() {
        let q = Prepared::from_rows(3, (0..30).map(|v| (v as f32 * 0.37).sin()).collect(), (0..10).collect());
        let t = Prepared::from_rows(3, (0..39).map(|v| (v as f32 * 0.11).cos()).collect(), (0..13).collect());
        let reference = nearest_sq(&q, &t, 1000);
        for tile in [1, 2, 3, 7] {
            assert_eq!(nearest_sq(&q, &t, tile), reference);
        }
    }

    #[test]
    fn identical_rows_are_exactly_zero_apart() {
        let row = vec![0.3f32, -1.7, 2.2, 0.9, 1e-3];
        let a = Prepared::from_rows(5, row.clone(), vec![0]);
        let b = Prepared::from_rows(5, [vec![9.0; 5], row].concat(), vec![0, 1]);
        assert_eq!(nearest_sq(&a, &b, 1), vec![0.0]);
    }
}
