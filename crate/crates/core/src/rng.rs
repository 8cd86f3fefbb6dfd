//! Counter-based random streams for speckle realizations.
//!
//! Each realization draws from its own ChaCha20 stream: the key is expanded
//! from the master seed and the stream id is the realization index. A given
//! `(master_seed, realization_index)` pair therefore yields the same numbers no
//! matter which worker generates it or in what order.
//!
//! Complex circular Gaussian samples use the polar Box–Muller transform of two
//! uniforms built from the top 53 bits of consecutive 64-bit outputs:
//!
//! ```text
//! u1 = 1 - (w1 >> 11) * 2^-53        in (0, 1]
//! u2 =     (w2 >> 11) * 2^-53        in [0, 1)
//! r  = sqrt(-2 ln u1)
//! z  = r cos(2π u2) + i r sin(2π u2)
//! ```
//!
//! so Re z and Im z are independent standard normals and `E|z|² = 2`.
//! Golden tests pin this transform; changing it changes every result.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

pub struct RealizationRng {
    inner: ChaCha20Rng,
}

impl RealizationRng {
    pub fn new(master_seed: u64, realization_index: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(master_seed);
        inner.set_stream(realization_index);
        Self { inner }
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * INV_2_53
    }

    /// `g1 + i g2` with `g1`, `g2` independent standard normals.
    pub fn complex_normal(&mut self) -> Complex64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        Complex64::new(r * c, r * s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
