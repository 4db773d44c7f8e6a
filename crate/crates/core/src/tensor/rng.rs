//! Seeded random tensors.
//!
//! Every draw comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, which is specified bit-for-bit and independent of the
//! platform. Uniform values use the top 24 bits of each `u32` output, so the
//! same sample is exactly representable in both `f32` and `f64`. Normal
//! values use the Box–Muller transform on pairs of uniforms, consuming both
//! outputs of each pair.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    /// Standard normal N(0, 1).
    Normal,
    /// Uniform on `[lo, hi)`.
    Uniform(f64, f64),
}

/// Deterministic per-purpose seed derivation (SplitMix64 finalizer over
/// `seed ^ stream·φ`).
pub trait SplitSeed {
    fn split(self, stream: u64) -> u64;
}

impl SplitSeed for u64 {
    fn split(self, stream: u64) -> u64 {
        let mut z = self ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

pub(crate) fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u32() >> 8) as f64 / (1u32 << 24) as f64
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fills a tensor of `shape` from `dist`, deterministically in `seed`.
pub fn rng_fill<T: Element>(dist: Distribution, shape: impl Into<Shape>, seed: u64) -> Tensor<T> {
    let shape = shape.into();
    let n = shape.numel();
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(n);
    match dist {
        Distribution::Uniform(lo, hi) => {
            for _ in 0..n {
                let u = unit_uniform(&mut rng);
                let mut v = T::from_f64(lo + (hi - lo) * u);
                if v >= T::from_f64(hi) {
                    // rounding in the cast reached the open upper bound
                    v = T::from_f64(lo);
                }
                data.push(v);
            }
        }
        Distribution::Normal => {
            while data.len() < n {
                // 1 - u lies in (0, 1], keeping the logarithm finite
                let u1 = 1.0 - unit_uniform(&mut rng);
                let u2 = unit_uniform(&mut rng);
                let r = (-2.0 * u1.ln()).sqrt();
                let theta = std::f64::consts::TAU * u2;
                data.push(T::from_f64(r * theta.cos()));
                if data.len() < n {
                    data.push(T::from_f64(r * theta.sin()));
                }
            }
        }
    }
    Tensor::from_parts(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a: Tensor<f32> = rng_fill(Distribution::Normal, [4, 5], 42);
        let b: Tensor<f32> = rng_fill(Distribution::Normal, [4, 5], 42);
        let c: Tensor<f32> = rng_fill(Distribution::Normal, [4, 5], 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn normal_moments() {
        let x: Tensor<f64> = rng_fill(Distribution::Normal, [100_000], 7);
        let mean = x.mean_all();
        let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.numel() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn uniform_range() {
        let x: Tensor<f32> = rng_fill(Distribution::Uniform(0.0, 1.0), [50_000], 9);
        assert!(x.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        let y: Tensor<f64> = rng_fill(Distribution::Uniform(-3.0, -1.0), [1000], 9);
        assert!(y.data().iter().all(|&v| (-3.0..-1.0).contains(&v)));
    }

    #[test]
    fn split_streams_differ() {
        assert_ne!(5u64.split(0), 5u64.split(1));
        assert_eq!(5u64.split(3), 5u64.split(3));
    }
}
