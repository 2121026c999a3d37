use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::SynthError;
use crate::model::{idx3, Axis, SliceFeatureStack, Volume};

/// Fixed random patch embedding: `tanh(W [patch; 1])`.
///
/// `W` is `dim × (p² + 1)` Gaussian with the last column acting as a bias.
/// The pixel part has standard deviation `gain / p`, so a uniform patch of
/// intensity `c` reaches pre-activations of order `c · gain`.
#[derive(Debug, Clone, PartialEq)]
pub struct MockEncoder {
    patch: usize,
    dim: usize,
    seed: u64,
    weights: Vec<f32>,
    lipschitz: f64,
}

const GAIN: f64 = 2.0;
const BIAS_STD: f64 = 0.1;

impl MockEncoder {
    pub fn new(patch: usize, dim: usize, seed: u64) -> Self {
        assert!(patch > 0 && dim > 0, "encoder extents must be positive");
        let inputs = patch * patch;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, GAIN / patch as f64).expect("finite std");
        let b = Normal::new(0.0, BIAS_STD).expect("finite std");
        let mut weights = Vec::with_capacity(dim * (inputs + 1));
        for _ in 0..dim {
            weights.extend((0..inputs).map(|_| w.sample(&mut rng) as f32));
            weights.push(b.sample(&mut rng) as f32);
        }
        let lipschitz = operator_norm(&weights, dim, inputs + 1, inputs);
        Self {
            patch,
            dim,
            seed,
            weights,
            lipschitz,
        }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Power-iteration estimate of the largest singular value of the pixel
    /// weights. `tanh` is 1-Lipschitz, so this bounds how far two patches'
    /// features can move apart per unit of pixel distance.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Encodes one row-major `p × p` patch.
    pub fn encode(&self, patch: &[f32], out: &mut [f32]) {
        let stride = self.patch * self.patch + 1;
        debug_assert_eq!(patch.len(), stride - 1);
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(stride)) {
            let mut acc = row[stride - 1];
            for (w, x) in row.iter().zip(patch) {
                acc += w * x;
            }
            *o = acc.tanh();
        }
    }
}

fn operator_norm(weights: &[f32], rows: usize, stride: usize, cols: usize) -> f64 {
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..200 {
        let wv: Vec<f64> = (0..rows)
            .map(|r| (0..cols).map(|c| weights[r * stride + c] as f64 * v[c]).sum())
            .collect();
        let mut wtwv = vec![0.0; cols];
        for (r, &s) in wv.iter().enumerate() {
            for (c, t) in wtwv.iter_mut().enumerate() {
                *t += weights[r * stride + c] as f64 * s;
            }
        }
        let norm = wtwv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        sigma = norm.sqrt();
        v = wtwv.into_iter().map(|x| x / norm).collect();
    }
    sigma
}

/// Voxel at slice `h`, in-slice row `r` and column `c` of a view.
fn slice_voxel(axis: Axis, h: usize, r: usize, c: usize) -> (usize, usize, usize) {
    match axis {
        Axis::Axial => (h, r, c),
        Axis::Coronal => (r, h, c),
        Axis::Sagittal => (r, c, h),
    }
}

/// Runs the encoder over every slice of `volume` along `axis`, producing an
/// `[H, N_p, N_p, D]` stack.
pub fn mock_extract(
    encoder: &MockEncoder,
    volume_id: &str,
    volume: &Volume,
    axis: Axis,
    layer: u32,
) -> Result<SliceFeatureStack, SynthError> {
    let (size, p, dim) = (volume.size, encoder.patch, encoder.dim);
    if size % p != 0 {
        return Err(SynthError::NotDivisible { size, patch: p });
    }
    let grid = size / p;
    let mut data = vec![0.0f32; size * grid * grid * dim];
    data.par_chunks_mut(grid * grid * dim).enumerate().for_each(|(h, slice)| {
        let mut pixels = vec![0.0f32; p * p];
        for u in 0..grid {
            for v in 0..grid {
                for i in 0..p {
                    for j in 0..p {
                        let (x, y, z) = slice_voxel(axis, h, u * p + i, v * p + j);
                        pixels[i * p + j] = volume.data[idx3(size, x, y, z)];
                    }
                }
                let off = (u * grid + v) * dim;
                encoder.encode(&pixels, &mut slice[off..off + dim]);
            }
        }
    });
    Ok(SliceFeatureStack::new(volume_id, axis, layer, size, grid, dim, data)?)
}

/// Stacks for all three axes in axial, coronal, sagittal order.
pub fn extract_all_axes(
    encoder: &MockEncoder,
    volume_id: &str,
    volume: &Volume,
    layer: u32,
) -> Result<Vec<SliceFeatureStack>, SynthError> {
    Axis::ALL
        .iter()
        .map(|&axis| mock_extract(encoder, volume_id, volume, axis, layer))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dist(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        assert_eq!(MockEncoder::new(4, 8, 3), MockEncoder::new(4, 8, 3));
        assert_ne!(MockEncoder::new(4, 8, 3), MockEncoder::new(4, 8, 4));
    }

    #[test]
    fn lipschitz_bound_holds_on_random_pairs() {
        let enc = MockEncoder::new(5, 16, 7);
        assert!(enc.lipschitz() > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mut fa, mut fb) = (vec![0.0; 16], vec![0.0; 16]);
        for _ in 0..500 {
            let a: Vec<f32> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
            enc.encode(&a, &mut fa);
            enc.encode(&b, &mut fb);
            assert!(dist(&fa, &fb) <= enc.lipschitz() * dist(&a, &b) * (1.0 + 1e-6));
        }
    }

    #[test]
    fn features_are_local_to_patches() {
        // Changing one voxel touches exactly one patch per slice stack.
        let enc = MockEncoder::new(4, 6, 1);
        let base = Volume::zeros(8);
        let mut bumped = base.clone();
        bumped.data[idx3(8, 5, 2, 6)] = 1.0;
        for axis in Axis::ALL {
            let a = mock_extract(&enc, "v", &base, axis, 0).unwrap();
            let b = mock_extract(&enc, "v", &bumped, axis, 0).unwrap();
            let (h, u, v) = match axis {
                Axis::Axial => (5, 0, 1),
                Axis::Coronal => (2, 1, 1),
                Axis::Sagittal => (6, 1, 0),
            };
            for hh in 0..8 {
                for uu in 0..2 {
                    for vv in 0..2 {
                        let same = a.feature(hh, uu, vv) == b.feature(hh, uu, vv);
                        assert_eq!(same, (hh, uu, vv) != (h, u, v), "{axis} {hh} {uu} {vv}");
                    }
                }
            }
        }
    }

    #[test]
    fn constant_volume_gives_one_feature() {
        let enc = MockEncoder::new(4, 6, 5);
        let vol = Volume {
            size: 8,
            data: vec![0.3; 512],
        };
        let s = mock_extract(&enc, "v", &vol, Axis::Coronal, 0).unwrap();
        let first = s.feature(0, 0, 0).to_vec();
        assert!(first.iter().any(|&v| v != 0.0));
        for chunk in s.data.chunks(6) {
            assert_eq!(chunk, &first[..]);
        }
    }

    #[test]
    fn stack_shape() {
        let enc = MockEncoder::new(7, 5, 0);
        let stacks = extract_all_axes(&enc, "v", &Volume::zeros(14), 3).unwrap();
        assert_eq!(stacks.len(), 3);
        for (s, axis) in stacks.iter().zip(Axis::ALL) {
            assert_eq!((s.axis, s.layer, s.size, s.grid, s.dim), (axis, 3, 14, 2, 5));
        }
        assert!(matches!(
            mock_extract(&enc, "v", &Volume::zeros(10), Axis::Axial, 0),
            Err(SynthError::NotDivisible { .. })
        ));
    }
}
