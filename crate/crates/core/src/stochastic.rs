//! Reproducible Wiener increments.
//!
//! Every trajectory draws from its own counter-addressed stream: the variate
//! with index `k` of stream `s` under master seed `m` is a pure function of
//! `(m, s, k)`. The keystream is ChaCha8 (key from `m`, 64-bit stream id `s`,
//! block position from `k`) and each standard normal consumes exactly two
//! 64-bit words through the cosine branch of the Box–Muller transform, so
//! ensembles are bit-identical for any worker count or scheduling order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Identifier recorded in output metadata for bit-exact replay.
pub const RNG_ALGORITHM: &str =
    "chacha8(rand_chacha-0.9,seed_from_u64,stream=trajectory)+box-muller-cos(2xu64/variate)";

/// Words (u32) consumed per Gaussian variate.
const WORDS_PER_VARIATE: u128 = 4;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    master_seed: u64,
    stream_id: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self::at(master_seed, stream_id, 0)
    }

    /// Stream positioned so that the next variate has index `counter`.
    pub fn at(master_seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        rng.set_word_pos(counter as u128 * WORDS_PER_VARIATE);
        Self {
            master_seed,
            stream_id,
            counter,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Standard normal variate; advances the counter by one.
    pub fn standard_normal(&mut self) -> f64 {
        let x = self.rng.next_u64();
        let y = self.rng.next_u64();
        self.counter += 1;
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((x >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = (y >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Wiener increment `ΔW ~ N(0, Δt)`.
    pub fn next_increment<T: Real>(&mut self, dt: T) -> Result<T> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::config("dt", "positive"));
        }
        Ok(T::lit(self.standard_normal()) * dt.sqrt())
    }

    pub fn increments<T: Real>(&mut self, n_steps: usize, dt: T) -> Result<Vec<T>> {
        (0..n_steps).map(|_| self.next_increment(dt)).collect()
    }

    /// `ξ(t_k)` for `k = 0..=n_steps` with `ξ(0) = 0`.
    pub fn wiener_path<T: Real>(&mut self, n_steps: usize, dt: T) -> Result<Vec<T>> {
        if n_steps == 0 {
            return Err(Error::config("n_steps", "at least 1"));
        }
        let mut path = Vec::with_capacity(n_steps + 1);
        let mut xi = T::zero();
        path.push(xi);
        for _ in 0..n_steps {
            xi += self.next_increment(dt)?;
            path.push(xi);
        }
        Ok(path)
    }
}
