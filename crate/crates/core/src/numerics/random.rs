use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{Mat, Vector};
use crate::{Error, Result};

/// Seeded counter-based generator (ChaCha8). Every API that consumes
/// randomness takes one of these explicitly.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer; mixes a stream id into a master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` of the generator seeded with `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self::new(derive_seed(seed, stream))
    }

    /// Child generator; advances `self` by one draw.
    pub fn split(&mut self) -> Self {
        Self::new(self.inner.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn chi_squared(&mut self, k: f64) -> f64 {
        ChiSquared::new(k)
            .expect("chi-squared degrees of freedom must be positive")
            .sample(&mut self.inner)
    }

    pub fn standard_normal_vec(&mut self, d: usize) -> Vector {
        Vector::from_iterator(d, (0..d).map(|_| self.standard_normal()))
    }

    pub fn uniform_open_vec(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.uniform_open()).collect()
    }
}

/// Wishart draw 𝒲(nu, scale) by the Bartlett decomposition.
pub fn sample_wishart(nu: f64, scale: &Mat, rng: &mut Rng) -> Result<Mat> {
    let d = scale.nrows();
    if !(nu >= d as f64) || !nu.is_finite() {
        return Err(Error::invalid(format!(
            "Wishart degrees of freedom {nu} below dimension {d}"
        )));
    }
    let l = super::cholesky(scale)?;
    let mut a = Mat::zeros(d, d);
    for i in 0..d {
        a[(i, i)] = rng.chi_squared(nu - i as f64).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    let la = &l * &a;
    let mut w = &la * la.transpose();
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = s;
            w[(j, i)] = s;
        }
    }
    Ok(w)
}
