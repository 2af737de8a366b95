//! Deterministic, splittable randomness.
//!
//! A [`RandomStream`] is identified by a 64-bit seed and a path of 64-bit
//! labels. The path is hashed with the SplitMix64 finalizer into a 256-bit
//! ChaCha8 key, so `(seed, path)` alone determines the output sequence and
//! sibling substreams never share keys. Standard normal variates come from
//! the Marsaglia polar method evaluated with `libm`, which keeps the sequence
//! bit-exact across platforms.
//!
//! Changing any of the above must bump [`GENERATOR_ID`].

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Recorded in every config and output file.
pub const GENERATOR_ID: &str = "chacha8-splitmix64-path/polar-libm/v1";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    for (depth, &label) in path.iter().enumerate() {
        let salt = mix64(label.wrapping_add(GOLDEN.wrapping_mul(depth as u64 + 2)));
        h = mix64(h ^ salt).wrapping_add(GOLDEN);
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = mix64(h.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    key
}

#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u64>,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::at_path(seed, Vec::new())
    }

    fn at_path(seed: u64, path: Vec<u64>) -> Self {
        let rng = ChaCha8Rng::from_seed(derive_key(seed, &path));
        Self {
            seed,
            path,
            rng,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Child stream `path ++ [label]`. Depends only on `(seed, path, label)`,
    /// never on how much of `self` has been consumed.
    pub fn substream(&self, label: u64) -> RandomStream {
        let mut path = self.path.clone();
        path.push(label);
        Self::at_path(self.seed, path)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One standard normal variate (Marsaglia polar method; the second value
    /// of each accepted pair is cached for the next call).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let scale = libm::sqrt(-2.0 * libm::log(s) / s);
                self.spare_normal = Some(v * scale);
                return u * scale;
            }
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.normal();
        }
    }

    pub fn normal_vector(&mut self, d: usize) -> Vec<f64> {
        let mut z = vec![0.0; d];
        self.fill_normal(&mut z);
        z
    }
}

/// Haar-distributed orthogonal `d × d` matrix: QR of a Gaussian matrix with
/// the columns of Q flipped so that diag(R) is positive.
pub fn random_rotation(stream: &mut RandomStream, d: usize) -> DMatrix<f64> {
    assert!(d >= 1, "rotation dimension must be at least 1");
    let gaussian = DMatrix::from_fn(d, d, |_, _| stream.normal());
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
