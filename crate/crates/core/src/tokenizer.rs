//! Slice features to fused 3D patch tokens.
//!
//! Each axis's `[H, N_p, N_p, D]` stack is average-pooled over blocks of `p`
//! consecutive slices and ℓ2-normalized, giving one token per `p³` cube. The
//! three views are aligned on a shared `(x, y, z)` frame:
//!
//! | view     | slice index `h` | in-slice `(u, v)` |
//! |----------|-----------------|-------------------|
//! | axial    | `x`             | `(y, z)`          |
//! | coronal  | `y`             | `(x, z)`          |
//! | sagittal | `z`             | `(x, y)`          |
//!
//! Every view is then projected by one shared Gaussian matrix and the three
//! projections are concatenated in axial, coronal, sagittal order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{idx3, Axis, BrainMask, ModelError, ScoreConfig, SliceFeatureStack, TokenCollection};

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("slice count {size} is not a multiple of the grid {grid}")]
    NotDivisible { size: usize, grid: usize },
    #[error("patch size {found} does not match configured {expected}")]
    PatchSize { expected: usize, found: usize },
    #[error("{0} features contain NaN or infinite values")]
    NonFinite(Axis),
    #[error("invalid projection shape: input {input}, output {output}")]
    ProjectionShape { input: usize, output: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("views disagree on shape: {0}")]
    ViewMismatch(String),
    #[error("volume {volume_id} layer {layer}: missing {axis} features")]
    MissingAxis {
        volume_id: String,
        layer: u32,
        axis: Axis,
    },
    #[error("stack for layer {found} given where layer {expected} was requested")]
    LayerMismatch { expected: u32, found: u32 },
    #[error("mask edge {mask} does not match volume edge {volume}")]
    MaskMismatch { mask: usize, volume: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One view's pooled tokens on the shared `(x, y, z)` frame, `[N_p³, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisTokenGrid {
    pub axis: Axis,
    pub layer: u32,
    pub grid: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl AxisTokenGrid {
    pub fn token(&self, x: usize, y: usize, z: usize) -> &[f32] {
        let off = idx3(self.grid, x, y, z) * self.dim;
        &self.data[off..off + self.dim]
    }
}

/// Maps (block, u, v) of a view to the shared frame.
fn frame_coord(axis: Axis, block: usize, u: usize, v: usize) -> (usize, usize, usize) {
    match axis {
        Axis::Axial => (block, u, v),
        Axis::Coronal => (u, block, v),
        Axis::Sagittal => (u, v, block),
    }
}

fn l2_normalize_into(sum: &[f64], scale: f64, out: &mut [f32]) {
    let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt() * scale;
    if norm == 0.0 {
        out.fill(0.0);
        return;
    }
    for (o, s) in out.iter_mut().zip(sum) {
        *o = (s * scale / norm) as f32;
    }
}

/// Patch-aligned average pooling followed by ℓ2-normalization.
///
/// A pooled mean of exactly zero stays the zero vector.
pub fn pool_axis(stack: &SliceFeatureStack) -> Result<AxisTokenGrid, TokenizeError> {
    let (size, grid, dim) = (stack.size, stack.grid, stack.dim);
    if size % grid != 0 {
        return Err(TokenizeError::NotDivisible { size, grid });
    }
    if stack.data.iter().any(|v| !v.is_finite()) {
        return Err(TokenizeError::NonFinite(stack.axis));
    }
    let p = size / grid;
    let mut data = vec![0.0f32; grid * grid * grid * dim];
    let mut sum = vec![0.0f64; dim];
    for block in 0..grid {
        for u in 0..grid {
            for v in 0..grid {
                sum.fill(0.0);
                for h in block * p..(block + 1) * p {
                    for (s, &f) in sum.iter_mut().zip(stack.feature(h, u, v)) {
                        *s += f as f64;
                    }
                }
                let (x, y, z) = frame_coord(stack.axis, block, u, v);
                let off = idx3(grid, x, y, z) * dim;
                l2_normalize_into(&sum, 1.0 / p as f64, &mut data[off..off + dim]);
            }
        }
    }
    Ok(AxisTokenGrid {
        axis: stack.axis,
        layer: stack.layer,
        grid,
        dim,
        data,
    })
}

/// Dense `[input_dim, output_dim]` Gaussian matrix with entries `N(0, 1/k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    input_dim: usize,
    output_dim: usize,
    seed: u64,
    entries: Vec<f32>,
}

impl ProjectionMatrix {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-major `[input_dim, output_dim]`.
    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    /// `Rᵀ z`, written into `out`.
    pub fn project_into(&self, z: &[f32], out: &mut [f32]) {
        debug_assert_eq!(z.len(), self.input_dim);
        debug_assert_eq!(out.len(), self.output_dim);
        out.fill(0.0);
        for (row, &zd) in self.entries.chunks_exact(self.output_dim).zip(z) {
            if zd == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(row) {
                *o += zd * r;
            }
        }
    }

    pub fn project(&self, z: &[f32]) -> Result<Vec<f32>, TokenizeError> {
        if z.len() != self.input_dim {
            return Err(TokenizeError::DimMismatch {
                expected: self.input_dim,
                found: z.len(),
            });
        }
        let mut out = vec![0.0; self.output_dim];
        self.project_into(z, &mut out);
        Ok(out)
    }
}

pub fn build_projection(input_dim: usize, output_dim: usize, seed: u64) -> Result<ProjectionMatrix, TokenizeError> {
    if output_dim == 0 || output_dim > input_dim {
        return Err(TokenizeError::ProjectionShape {
            input: input_dim,
            output: output_dim,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, (1.0 / output_dim as f64).sqrt()).expect("finite std");
    let entries = (0..input_dim * output_dim)
        .map(|_| normal.sample(&mut rng) as f32)
        .collect();
    Ok(ProjectionMatrix {
        input_dim,
        output_dim,
        seed,
        entries,
    })
}

/// Smallest `k` for which a Gaussian projection of `m` points keeps every
/// pairwise distance within `1 ± theta` with high probability:
/// `k ≥ 4 ln m / (θ²/2 − θ³/3)`.
pub fn jl_dimension(theta: f64, m: usize) -> usize {
    assert!(theta > 0.0 && theta < 1.0, "theta must lie in (0, 1)");
    let m = m.max(2) as f64;
    (4.0 * m.ln() / (theta * theta / 2.0 - theta.powi(3) / 3.0)).ceil() as usize
}

pub fn project_axis(grid: &AxisTokenGrid, projection: &ProjectionMatrix) -> Result<AxisTokenGrid, TokenizeError> {
    if grid.dim != projection.input_dim {
        return Err(TokenizeError::DimMismatch {
            expected: projection.input_dim,
            found: grid.dim,
        });
    }
    let k = projection.output_dim;
    let mut data = vec![0.0f32; grid.grid.pow(3) * k];
    for (src, dst) in grid.data.chunks_exact(grid.dim).zip(data.chunks_exact_mut(k)) {
        projection.project_into(src, dst);
    }
    Ok(AxisTokenGrid {
        axis: grid.axis,
        layer: grid.layer,
        grid: grid.grid,
        dim: k,
        data,
    })
}

/// Concatenates the three projected views into `[N_p³, 3k]` tokens.
pub fn fuse_views(
    axial: &AxisTokenGrid,
    coronal: &AxisTokenGrid,
    sagittal: &AxisTokenGrid,
) -> Result<Vec<f32>, TokenizeError> {
    let views = [axial, coronal, sagittal];
    for (view, expected) in views.iter().zip(Axis::ALL) {
        if view.axis != expected {
            return Err(TokenizeError::ViewMismatch(format!(
                "expected {expected} view, got {}",
                view.axis
            )));
        }
    }
    if views.iter().any(|v| v.grid != axial.grid || v.dim != axial.dim) {
        return Err(TokenizeError::ViewMismatch(format!(
            "grids {:?}, dims {:?}",
            views.map(|v| v.grid),
            views.map(|v| v.dim)
        )));
    }
    let k = axial.dim;
    let n = axial.grid.pow(3);
    let mut out = Vec::with_capacity(n * 3 * k);
    for t in 0..n {
        for view in views {
            out.extend_from_slice(&view.data[t * k..(t + 1) * k]);
        }
    }
    Ok(out)
}

/// Keep flag per token: set iff the fraction of foreground voxels inside the
/// token's `p³` cube is strictly above `threshold`.
pub fn mask_to_keep(mask: &BrainMask, patch: usize, threshold: f64) -> Result<Vec<u8>, TokenizeError> {
    if patch == 0 || !mask.size.is_multiple_of(patch) {
        return Err(TokenizeError::NotDivisible {
            size: mask.size,
            grid: patch,
        });
    }
    let grid = mask.size / patch;
    let cube = (patch * patch * patch) as f64;
    let mut counts = vec![0usize; grid * grid * grid];
    for x in 0..mask.size {
        for y in 0..mask.size {
            for z in 0..mask.size {
                if mask.get(x, y, z) {
                    counts[idx3(grid, x / patch, y / patch, z / patch)] += 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| (c as f64 / cube > threshold) as u8)
        .collect())
}

fn normalize_tokens(grid: &mut AxisTokenGrid) {
    let mut buf = vec![0.0f64; grid.dim];
    for tok in grid.data.chunks_exact_mut(grid.dim) {
        for (b, &t) in buf.iter_mut().zip(tok.iter()) {
            *b = t as f64;
        }
        l2_normalize_into(&buf, 1.0, tok);
    }
}

/// Pool, project, fuse and attach the keep grid for one volume and layer.
///
/// `stacks` must hold one stack per axis for `layer`; extra stacks for other
/// layers are ignored.
pub fn tokenize_volume(
    stacks: &[SliceFeatureStack],
    layer: u32,
    mask: &BrainMask,
    projection: &ProjectionMatrix,
    config: &ScoreConfig,
) -> Result<TokenCollection, TokenizeError> {
    let volume_id = stacks.first().map(|s| s.volume_id.clone()).unwrap_or_default();
    let mut views = Vec::with_capacity(3);
    for axis in Axis::ALL {
        let stack = stacks
            .iter()
            .find(|s| s.axis == axis && s.layer == layer)
            .ok_or_else(|| TokenizeError::MissingAxis {
                volume_id: volume_id.clone(),
                layer,
                axis,
            })?;
        views.push(stack);
    }
    let first = views[0];
    if views
        .iter()
        .any(|s| s.size != first.size || s.grid != first.grid || s.dim != first.dim)
    {
        return Err(TokenizeError::ViewMismatch(format!(
            "volume {volume_id}: stacks disagree on [H, N_p, D]"
        )));
    }
    if first.size % first.grid != 0 {
        return Err(TokenizeError::NotDivisible {
            size: first.size,
            grid: first.grid,
        });
    }
    let patch = first.size / first.grid;
    if patch != config.patch_size {
        return Err(TokenizeError::PatchSize {
            expected: config.patch_size,
            found: patch,
        });
    }
    if mask.size != first.size {
        return Err(TokenizeError::MaskMismatch {
            mask: mask.size,
            volume: first.size,
        });
    }
    if projection.output_dim != config.proj_dim {
        return Err(TokenizeError::DimMismatch {
            expected: config.proj_dim,
            found: projection.output_dim,
        });
    }

    let mut projected = Vec::with_capacity(3);
    for stack in views {
        let pooled = pool_axis(stack)?;
        let mut proj = project_axis(&pooled, projection)?;
        if config.renormalize_projected {
            normalize_tokens(&mut proj);
        }
        projected.push(proj);
    }
    let tokens = fuse_views(&projected[0], &projected[1], &projected[2])?;
    let keep = mask_to_keep(mask, patch, config.mask_keep_threshold)?;
    Ok(TokenCollection::new(
        volume_id,
        layer,
        first.grid,
        3 * projection.output_dim,
        tokens,
        keep,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn constant_stack(axis: Axis, size: usize, grid: usize, feature: &[f32]) -> SliceFeatureStack {
        let data = feature
            .iter()
            .copied()
            .cycle()
            .take(size * grid * grid * feature.len())
            .collect();
        SliceFeatureStack::new("v", axis, 1, size, grid, feature.len(), data).unwrap()
    }

    fn random_stack(axis: Axis, size: usize, grid: usize, dim: usize, seed: u64) -> SliceFeatureStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..size * grid * grid * dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        SliceFeatureStack::new("v", axis, 1, size, grid, dim, data).unwrap()
    }

    #[test]
    fn constant_features_pool_to_themselves() {
        let c = [0.6f32, 0.0, -0.8];
        for axis in Axis::ALL {
            let g = pool_axis(&constant_stack(axis, 6, 3, &c)).unwrap();
            for tok in g.data.chunks_exact(3) {
                for (a, b) in tok.iter().zip(&c) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn two_slice_block_pools_to_diagonal() {
        // p = 2, one token: slices carry (1,0) then (0,1).
        let stack = SliceFeatureStack::new("v", Axis::Axial, 1, 2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = pool_axis(&stack).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((g.data[0] - h).abs() < 1e-7 && (g.data[1] - h).abs() < 1e-7);
    }

    #[test]
    fn full_size_grid_has_4096_tokens() {
        // Only checks the shape arithmetic; a 224-slice stack with D = 1.
        let stack = constant_stack(Axis::Sagittal, 224, 16, &[1.0]);
        let g = pool_axis(&stack).unwrap();
        assert_eq!(g.grid, 16);
        assert_eq!(g.data.len(), 4096);
    }

    #[test]
    fn pool_rejects_bad_input() {
        let s = SliceFeatureStack::new("v", Axis::Axial, 1, 5, 2, 1, vec![0.0; 20]).unwrap();
        assert!(matches!(pool_axis(&s), Err(TokenizeError::NotDivisible { .. })));
        let mut s = constant_stack(Axis::Axial, 4, 2, &[1.0]);
        s.data[3] = f32::NAN;
        assert!(matches!(pool_axis(&s), Err(TokenizeError::NonFinite(Axis::Axial))));
    }

    #[test]
    fn pooled_tokens_are_unit_or_zero() {
        let mut s = random_stack(Axis::Coronal, 8, 4, 5, 3);
        // Zero out one whole block so its pooled mean is exactly zero.
        for h in 0..2 {
            for d in 0..5 {
                s.data[((h * 4 + 1) * 4 + 2) * 5 + d] = 0.0;
            }
        }
        let g = pool_axis(&s).unwrap();
        let mut zeros = 0;
        for tok in g.data.chunks_exact(5) {
            let n: f32 = tok.iter().map(|v| v * v).sum::<f32>().sqrt();
            if n == 0.0 {
                zeros += 1;
            } else {
                assert!((n - 1.0).abs() < 1e-5);
            }
        }
        assert_eq!(zeros, 1);
        // Coronal block 0, (u, v) = (1, 2) lands on (x, y, z) = (1, 0, 2).
        assert!(g.token(1, 0, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn in_slice_transpose_transposes_token_grid() {
        let (size, grid, dim) = (6, 3, 4);
        for (axis, seed) in Axis::ALL.into_iter().zip(10..) {
            let s = random_stack(axis, size, grid, dim, seed);
            let mut t = s.clone();
            for h in 0..size {
                for u in 0..grid {
                    for v in 0..grid {
                        let src = ((h * grid + u) * grid + v) * dim;
                        let dst = ((h * grid + v) * grid + u) * dim;
                        t.data[dst..dst + dim].copy_from_slice(&s.data[src..src + dim]);
                    }
                }
            }
            let a = pool_axis(&s).unwrap();
            let b = pool_axis(&t).unwrap();
            for i in 0..grid {
                for j in 0..grid {
                    for k in 0..grid {
                        // Swap the two in-slice frame axes of this view.
                        let (x, y, z) = match axis {
                            Axis::Axial => (i, k, j),
                            Axis::Coronal => (k, j, i),
                            Axis::Sagittal => (j, i, k),
                        };
                        assert_eq!(a.token(i, j, k), b.token(x, y, z), "{axis}");
                    }
                }
            }
        }
    }

    #[test]
    fn projection_is_deterministic_with_expected_shape() {
        let a = build_projection(1024, 128, 7).unwrap();
        let b = build_projection(1024, 128, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.entries().len(), 1024 * 128);
        assert_ne!(a, build_projection(1024, 128, 8).unwrap());
    }

    #[test]
    fn projection_entry_statistics() {
        let (d, k) = (1024usize, 128usize);
        let p = build_projection(d, k, 7).unwrap();
        let n = (d * k) as f64;
        let mean = p.entries().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = p.entries().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let sigma = (1.0 / k as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
        assert!((var * k as f64 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn projection_shape_errors() {
        assert!(matches!(build_projection(4, 5, 0), Err(TokenizeError::ProjectionShape { .. })));
        assert!(matches!(build_projection(4, 0, 0), Err(TokenizeError::ProjectionShape { .. })));
        let p = build_projection(4, 2, 0).unwrap();
        assert!(matches!(p.project(&[1.0; 3]), Err(TokenizeError::DimMismatch { .. })));
        let g = pool_axis(&constant_stack(Axis::Axial, 2, 1, &[1.0; 3])).unwrap();
        assert!(matches!(project_axis(&g, &p), Err(TokenizeError::DimMismatch { .. })));
    }

    #[test]
    fn projection_is_linear() {
        let p = build_projection(64, 16, 1).unwrap();
        assert!(p.project(&[0.0; 64]).unwrap().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let u: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, b) = (rng.random_range(-3.0f32..3.0), rng.random_range(-3.0f32..3.0));
            let mix: Vec<f32> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = p.project(&mix).unwrap();
            let pu = p.project(&u).unwrap();
            let pv = p.project(&v).unwrap();
            for j in 0..16 {
                let rhs = a * pu[j] + b * pv[j];
                let scale = (a * pu[j]).abs().max((b * pv[j]).abs()).max(1.0);
                assert!((lhs[j] - rhs).abs() <= 1e-4 * scale);
            }
        }
    }

    #[test]
    fn jl_dimension_formula() {
        // 4 ln 20 / (0.03125 - 0.015625/3)
        assert_eq!(jl_dimension(0.25, 20), 461);
        assert!(jl_dimension(0.1, 1000) > jl_dimension(0.25, 1000));
    }

    fn grid_of(axis: Axis, grid: usize, dim: usize, f: impl Fn(usize) -> f32) -> AxisTokenGrid {
        AxisTokenGrid {
            axis,
            layer: 1,
            grid,
            dim,
            data: (0..grid.pow(3) * dim).map(f).collect(),
        }
    }

    #[test]
    fn fusion_layout() {
        let k = 128;
        let ax = grid_of(Axis::Axial, 2, k, |i| i as f32);
        let cor = grid_of(Axis::Coronal, 2, k, |_| 0.0);
        let sag = grid_of(Axis::Sagittal, 2, k, |_| 0.0);
        let fused = fuse_views(&ax, &cor, &sag).unwrap();
        assert_eq!(fused.len(), 8 * 384);
        for t in 0..8 {
            let tok = &fused[t * 384..(t + 1) * 384];
            assert_eq!(&tok[..k], &ax.data[t * k..(t + 1) * k]);
            assert!(tok[k..].iter().all(|&v| v == 0.0));
        }

        let cor = grid_of(Axis::Coronal, 2, k, |i| 1000.0 + i as f32);
        let sag = grid_of(Axis::Sagittal, 2, k, |i| -(i as f32));
        let fused = fuse_views(&ax, &cor, &sag).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (x, y, z, j) = (
                rng.random_range(0..2),
                rng.random_range(0..2),
                rng.random_range(0..2),
                rng.random_range(0..k),
            );
            let t = idx3(2, x, y, z);
            assert_eq!(fused[t * 3 * k + k + j], cor.token(x, y, z)[j]);
            assert_eq!(fused[t * 3 * k + 2 * k + j], sag.token(x, y, z)[j]);
        }
    }

    #[test]
    fn fusion_rejects_mismatched_views() {
        let ax = grid_of(Axis::Axial, 2, 4, |_| 0.0);
        let cor = grid_of(Axis::Coronal, 3, 4, |_| 0.0);
        let sag = grid_of(Axis::Sagittal, 2, 4, |_| 0.0);
        assert!(fuse_views(&ax, &cor, &sag).is_err());
        assert!(fuse_views(&ax, &sag, &ax).is_err());
    }

    #[test]
    fn keep_grid_counts_foreground() {
        assert!(mask_to_keep(&BrainMask::filled(4, true), 2, 0.0).unwrap().iter().all(|&k| k == 1));
        assert!(mask_to_keep(&BrainMask::filled(4, false), 2, 0.0).unwrap().iter().all(|&k| k == 0));

        let mut mask = BrainMask::filled(4, false);
        mask.data[idx3(4, 3, 2, 3)] = 1; // one voxel of cube (1, 1, 1)
        let keep = mask_to_keep(&mask, 2, 0.0).unwrap();
        assert_eq!(keep.iter().map(|&k| k as usize).sum::<usize>(), 1);
        assert_eq!(keep[idx3(2, 1, 1, 1)], 1);
        let keep = mask_to_keep(&mask, 2, 0.2).unwrap();
        assert!(keep.iter().all(|&k| k == 0));
        assert!(mask_to_keep(&mask, 3, 0.0).is_err());
    }

    fn stacks(size: usize, grid: usize, dim: usize, seed: u64) -> Vec<SliceFeatureStack> {
        Axis::ALL
            .into_iter()
            .zip(seed..)
            .map(|(a, s)| random_stack(a, size, grid, dim, s))
            .collect()
    }

    #[test]
    fn tokenize_shapes_and_keep() {
        let cfg = ScoreConfig {
            patch_size: 2,
            proj_dim: 4,
            ..ScoreConfig::default()
        };
        let p = build_projection(8, 4, 0).unwrap();
        let mut mask = BrainMask::filled(6, false);
        mask.data[0] = 1;
        let c = tokenize_volume(&stacks(6, 3, 8, 0), 1, &mask, &p, &cfg).unwrap();
        assert_eq!((c.grid, c.dim, c.len()), (3, 12, 27));
        assert_eq!(c.kept_indices().collect::<Vec<_>>(), vec![0]);

        let empty = tokenize_volume(&stacks(6, 3, 8, 0), 1, &BrainMask::filled(6, false), &p, &cfg).unwrap();
        assert_eq!(empty.kept_count(), 0);
    }

    #[test]
    fn tokenize_reports_missing_axis_and_mismatches() {
        let cfg = ScoreConfig {
            patch_size: 2,
            proj_dim: 4,
            ..ScoreConfig::default()
        };
        let p = build_projection(8, 4, 0).unwrap();
        let mask = BrainMask::filled(6, true);
        let mut s = stacks(6, 3, 8, 0);
        s.remove(1);
        assert!(matches!(
            tokenize_volume(&s, 1, &mask, &p, &cfg),
            Err(TokenizeError::MissingAxis { axis: Axis::Coronal, .. })
        ));
        assert!(matches!(
            tokenize_volume(&stacks(6, 3, 8, 0), 2, &mask, &p, &cfg),
            Err(TokenizeError::MissingAxis { layer: 2, .. })
        ));
        let wrong_k = build_projection(8, 3, 0).unwrap();
        assert!(matches!(
            tokenize_volume(&stacks(6, 3, 8, 0), 1, &mask, &wrong_k, &cfg),
            Err(TokenizeError::DimMismatch { .. })
        ));
        let wrong_d = build_projection(9, 4, 0).unwrap();
        assert!(matches!(
            tokenize_volume(&stacks(6, 3, 8, 0), 1, &mask, &wrong_d, &cfg),
            Err(TokenizeError::DimMismatch { .. })
        ));
        assert!(matches!(
            tokenize_volume(&stacks(6, 3, 8, 0), 1, &BrainMask::filled(4, true), &p, &cfg),
            Err(TokenizeError::MaskMismatch { .. })
        ));
    }

    #[test]
    fn constant_features_fuse_to_repeated_projection() {
        let cfg = ScoreConfig {
            patch_size: 2,
            proj_dim: 3,
            ..ScoreConfig::default()
        };
        let c = [0.0f32, 0.6, 0.8, 0.0];
        let s: Vec<_> = Axis::ALL.into_iter().map(|a| constant_stack(a, 4, 2, &c)).collect();
        let p = build_projection(4, 3, 9).unwrap();
        let tc = tokenize_volume(&s, 1, &BrainMask::filled(4, true), &p, &cfg).unwrap();
        let pc = p.project(&c).unwrap();
        for t in 0..8 {
            let tok = tc.token(t);
            for view in 0..3 {
                for j in 0..3 {
                    assert!((tok[view * 3 + j] - pc[j]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn renormalize_variant_yields_unit_views() {
        let cfg = ScoreConfig {
            patch_size: 2,
            proj_dim: 4,
            renormalize_projected: true,
            ..ScoreConfig::default()
        };
        let p = build_projection(8, 4, 0).unwrap();
        let c = tokenize_volume(&stacks(6, 3, 8, 5), 1, &BrainMask::filled(6, true), &p, &cfg).unwrap();
        for t in 0..c.len() {
            for view in c.token(t).chunks_exact(4) {
                let n: f32 = view.iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-5);
            }
        }
    }
}
