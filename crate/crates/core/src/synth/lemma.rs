//! Constructed slice features for the patch-sensitivity bound.
//!
//! A patch of `p` slices is seen in a normal and an anomalous version. On
//! the anomalous slices `A` every feature difference equals one shared vector
//! of norm `Δ0`; elsewhere each difference has norm `ε` in a random
//! direction. Pooling is the plain slice mean, so the pooled difference must
//! stay at least `α Δ0 − (1 − α) ε` apart with `α = |A| / p`.
//!
//! The checks run in exact arithmetic. Every `f64` is a dyadic rational, so
//! scaling all values by `2^SCALE_BITS` turns them into integers and sums of
//! squares into exact big-integer comparisons.

use num_bigint::BigInt;
use num_traits::{Float, Signed, Zero};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SynthError;

/// Larger than the 1075-bit exponent range below 1.0 of `f64`.
const SCALE_BITS: i64 = 1100;
const NUDGE: f64 = 1.0 / (1u64 << 40) as f64;

fn fixed(x: f64) -> BigInt {
    let (mantissa, exponent, sign) = Float::integer_decode(x);
    let v = BigInt::from(mantissa) << ((exponent as i64 + SCALE_BITS) as usize);
    if sign < 0 {
        -v
    } else {
        v
    }
}

fn norm_sq(v: &[BigInt]) -> BigInt {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaScenario {
    pub patch: usize,
    pub alpha: f64,
    pub delta0: f64,
    pub epsilon: f64,
    /// Anomalous slice indices, ascending.
    pub anomalous: Vec<usize>,
    /// `u_t(x^N)` for every slice.
    pub normal: Vec<Vec<f64>>,
    /// `u_t(x^A)` for every slice.
    pub perturbed: Vec<Vec<f64>>,
}

impl LemmaScenario {
    pub fn dim(&self) -> usize {
        self.normal.first().map_or(0, Vec::len)
    }

    fn is_anomalous(&self, t: usize) -> bool {
        self.anomalous.binary_search(&t).is_ok()
    }

    fn pooled(slices: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; slices[0].len()];
        for s in slices {
            for (o, v) in out.iter_mut().zip(s) {
                *o += v;
            }
        }
        let p = slices.len() as f64;
        out.iter_mut().for_each(|o| *o /= p);
        out
    }

    /// Slice-mean token of the normal patch.
    pub fn pooled_normal(&self) -> Vec<f64> {
        Self::pooled(&self.normal)
    }

    /// Slice-mean token of the anomalous patch.
    pub fn pooled_anomalous(&self) -> Vec<f64> {
        Self::pooled(&self.perturbed)
    }

    /// `‖z_P(x^A) − z_P(x^N)‖` in floating point.
    pub fn pooled_difference_norm(&self) -> f64 {
        self.pooled_anomalous()
            .iter()
            .zip(self.pooled_normal())
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `α Δ0 − (1 − α) ε`.
    pub fn bound(&self) -> f64 {
        self.alpha * self.delta0 - (1.0 - self.alpha) * self.epsilon
    }

    fn differences(&self) -> Vec<Vec<BigInt>> {
        self.normal
            .iter()
            .zip(&self.perturbed)
            .map(|(n, a)| a.iter().zip(n).map(|(&a, &n)| fixed(a) - fixed(n)).collect())
            .collect()
    }

    fn sum_over(diffs: &[Vec<BigInt>], keep: impl Fn(usize) -> bool) -> Vec<BigInt> {
        let mut sum = vec![BigInt::zero(); diffs[0].len()];
        for (_, d) in diffs.iter().enumerate().filter(|(t, _)| keep(*t)) {
            for (s, v) in sum.iter_mut().zip(d) {
                *s += v;
            }
        }
        sum
    }

    fn mean_contrast_holds(&self, diffs: &[Vec<BigInt>]) -> bool {
        let s = Self::sum_over(diffs, |t| self.is_anomalous(t));
        let rhs = fixed(self.delta0) * BigInt::from(self.anomalous.len());
        norm_sq(&s) >= &rhs * &rhs
    }

    fn outside_within(&self, diffs: &[Vec<BigInt>], t: usize) -> bool {
        let eps = fixed(self.epsilon);
        norm_sq(&diffs[t]) <= &eps * &eps
    }

    /// Exact check of both assumptions: the anomalous mean difference has
    /// norm at least `Δ0`, every other difference at most `ε`.
    pub fn assumptions_hold(&self) -> bool {
        let diffs = self.differences();
        self.mean_contrast_holds(&diffs) && (0..self.patch).filter(|&t| !self.is_anomalous(t)).all(|t| self.outside_within(&diffs, t))
    }

    /// Exact check of `‖z_P(x^A) − z_P(x^N)‖ ≥ α Δ0 − (1 − α) ε`, multiplied
    /// through by `p` and evaluated with `α = |A| / p`.
    pub fn bound_holds(&self) -> bool {
        let diffs = self.differences();
        let a = self.anomalous.len();
        let rhs = fixed(self.delta0) * BigInt::from(a) - fixed(self.epsilon) * BigInt::from(self.patch - a);
        if !rhs.is_positive() {
            return true;
        }
        norm_sq(&Self::sum_over(&diffs, |_| true)) >= &rhs * &rhs
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Builds a scenario whose features meet both assumptions exactly.
///
/// Rounding in `u_N + Δ` can shave a difference below `Δ0` or push it over
/// `ε`; the offending deltas are rescaled by `1 ± 2⁻⁴⁰` until the exact
/// checks pass.
pub fn build_lemma_scenario(
    patch: usize,
    alpha: f64,
    delta0: f64,
    epsilon: f64,
    dim: usize,
    seed: u64,
) -> Result<LemmaScenario, SynthError> {
    if patch == 0 || dim == 0 {
        return Err(SynthError::InvalidSpec("patch and dim must be positive".into()));
    }
    if !(delta0 >= 0.0 && delta0.is_finite() && epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("need finite Δ0, ε >= 0, got {delta0}, {epsilon}")));
    }
    let count = alpha * patch as f64;
    if !(alpha > 0.0 && alpha <= 1.0) || (count - count.round()).abs() > 1e-9 {
        return Err(SynthError::InfeasibleAlpha { alpha, patch });
    }
    let count = count.round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anomalous = sample(&mut rng, patch, count).into_vec();
    anomalous.sort_unstable();
    let normal: Vec<Vec<f64>> = (0..patch)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let shared = random_unit(&mut rng, dim);
    let outside: Vec<Vec<f64>> = (0..patch).map(|_| random_unit(&mut rng, dim)).collect();

    let mut scenario = LemmaScenario {
        patch,
        alpha,
        delta0,
        epsilon,
        anomalous,
        normal,
        perturbed: Vec::new(),
    };
    let mut shared_scale = delta0;
    let mut outside_scale = vec![epsilon; patch];
    for _ in 0..64 {
        scenario.perturbed = (0..patch)
            .map(|t| {
                let (dir, s) = if scenario.is_anomalous(t) {
                    (&shared, shared_scale)
                } else {
                    (&outside[t], outside_scale[t])
                };
                scenario.normal[t].iter().zip(dir).map(|(n, d)| n + s * d).collect()
            })
            .collect();
        let diffs = scenario.differences();
        let mut ok = true;
        if !scenario.mean_contrast_holds(&diffs) {
            shared_scale *= 1.0 + NUDGE;
            ok = false;
        }
        for t in (0..patch).filter(|&t| !scenario.is_anomalous(t)) {
            if !scenario.outside_within(&diffs, t) {
                outside_scale[t] *= 1.0 - NUDGE;
                ok = false;
            }
        }
        if ok {
            return Ok(scenario);
        }
    }
    Err(SynthError::InvalidSpec("could not meet the assumptions exactly".into()))
}
