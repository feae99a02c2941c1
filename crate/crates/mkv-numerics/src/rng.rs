//! Counter-addressed Gaussian noise.
//!
//! Every particle owns a ChaCha8 stream selected by its index; step `k` of that
//! stream starts at a fixed word offset, so any (seed, particle, step) triple can
//! be regenerated without replaying earlier steps. Normals come from Box–Muller
//! on 53-bit uniforms, which keeps the word count per step fixed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name and version of the noise generator. Bump the version whenever the
/// mapping from (seed, particle, step) to normals changes.
pub const GENERATOR: &str = "chacha8-boxmuller/v1";

pub struct NoiseStream {
    rng: ChaCha8Rng,
    dim: usize,
    words_per_step: u128,
    next_step: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, particle: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(particle);
        // two u64 per Box–Muller pair, two 32-bit words per u64
        let pairs = dim.div_ceil(2) as u128;
        NoiseStream { rng, dim, words_per_step: 4 * pairs, next_step: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fills `out` with `dim` standard normals for the given step.
    pub fn standard_normals(&mut self, step: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        if step != self.next_step {
            self.rng.set_word_pos(step as u128 * self.words_per_step);
        }
        let mut i = 0;
        while i < self.dim {
            let (z0, z1) = box_muller(self.rng.next_u64(), self.rng.next_u64());
            out[i] = z0;
            if i + 1 < self.dim {
                out[i + 1] = z1;
            }
            i += 2;
        }
        self.next_step = step + 1;
    }
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // (0, 1] keeps the logarithm finite
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Derives an independent seed for a sub-task (replicate, window, ...).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let mut seq = NoiseStream::new(11, 3, 3);
        let mut direct = NoiseStream::new(11, 3, 3);
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for step in 0..20 {
            seq.standard_normals(step, &mut a);
        }
        direct.standard_normals(19, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn particles_get_distinct_streams() {
        let mut a = [0.0; 1];
        let mut b = [0.0; 1];
        NoiseStream::new(5, 0, 1).standard_normals(0, &mut a);
        NoiseStream::new(5, 1, 1).standard_normals(0, &mut b);
        assert_ne!(a, b);
    }

    #[test]
    fn moments_are_standard() {
        let mut s = NoiseStream::new(2024, 0, 2);
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        let mut z = [0.0; 2];
        for k in 0..n / 2 {
            s.standard_normals(k as u64, &mut z);
            for v in z {
                m1 += v;
                m2 += v * v;
            }
        }
        let m1 = m1 / n as f64;
        let m2 = m2 / n as f64;
        assert!(m1.abs() < 4.0 / (n as f64).sqrt());
        assert!((m2 - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
