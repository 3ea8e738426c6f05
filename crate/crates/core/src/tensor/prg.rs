//! Keyed counter-mode generator.
//!
//! The stream for a seed is the ChaCha20 keystream under the 256-bit key
//! `seed.to_le_bytes() || KEY_TAG`, consumed as little-endian `u64` words.
//! `counter` is the number of words consumed so far; word `k` sits at ChaCha
//! word position `2k`. A word `w` maps to `u = (w >> 11) * 2^-53` in `[0, 1)`
//! and a uniform draw is `low + (high - low) * u`. Parties holding the same
//! seed at the same counter therefore produce bit-identical matrices.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

const KEY_TAG: &[u8; 24] = b"trishare/prg/chacha20/v1";
const UNIT: f64 = 1.0 / (1u64 << 53) as f64;

/// Sampling interval for masks and random shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomRange {
    pub low: f64,
    pub high: f64,
    /// Smallest magnitude accepted when a draw must be non-zero.
    pub nonzero_floor: f64,
}

impl RandomRange {
    pub fn new(low: f64, high: f64, nonzero_floor: f64) -> Result<Self> {
        let r = Self {
            low,
            high,
            nonzero_floor,
        };
        r.validate()?;
        Ok(r)
    }

    /// Symmetric `[-half_width, half_width]` range.
    pub fn symmetric(half_width: f64) -> Result<Self> {
        Self::new(-half_width, half_width, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(Error::Config(format!(
                "random range needs finite low < high, got [{}, {}]",
                self.low, self.high
            )));
        }
        if !(self.nonzero_floor >= 0.0 && self.nonzero_floor < self.low.abs().max(self.high.abs()))
        {
            return Err(Error::Config(format!(
                "nonzero floor {} must be in [0, max(|low|, |high|))",
                self.nonzero_floor
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

impl std::str::FromStr for RandomRange {
    type Err = Error;

    /// Parses `LO:HI`.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected LO:HI, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad range bound {v:?}: {e}")))
        };
        Self::new(parse(lo)?, parse(hi)?, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrgSeed {
    pub seed: u64,
    pub counter: u64,
}

impl PrgSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    fn stream(&self) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..].copy_from_slice(KEY_TAG);
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_word_pos(u128::from(self.counter) * 2);
        rng
    }

    /// Draws a `rows x cols` matrix uniform in `range`. With
    /// `require_nonzero`, draws below `range.nonzero_floor` in magnitude are
    /// rejected and redrawn, so the counter may advance past `rows * cols`.
    pub fn draw(
        &mut self,
        rows: usize,
        cols: usize,
        range: &RandomRange,
        require_nonzero: bool,
    ) -> Result<Matrix> {
        range.validate()?;
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("cannot draw a {rows}x{cols} matrix")));
        }
        let mut rng = self.stream();
        let width = range.high - range.low;
        let mut data = Vec::with_capacity(rows * cols);
        let mut used = 0u64;
        while data.len() < rows * cols {
            let u = (rng.next_u64() >> 11) as f64 * UNIT;
            used += 1;
            let v = range.low + width * u;
            if require_nonzero && (v == 0.0 || v.abs() < range.nonzero_floor) {
                continue;
            }
            data.push(v);
        }
        self.counter += used;
        Matrix::new(rows, cols, data)
    }

    /// Draws non-zero values with magnitude log-uniform in `[min_mag, max_mag]`
    /// and a uniformly random sign. Consumes exactly one word per element.
    pub fn draw_log_uniform(
        &mut self,
        rows: usize,
        cols: usize,
        min_mag: f64,
        max_mag: f64,
    ) -> Result<Matrix> {
        if !(min_mag > 0.0 && min_mag < max_mag && max_mag.is_finite()) {
            return Err(Error::Config(format!(
                "log-uniform magnitudes need 0 < min < max, got [{min_mag}, {max_mag}]"
            )));
        }
        let mut rng = self.stream();
        let (lo, hi) = (min_mag.ln(), max_mag.ln());
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                let w = rng.next_u64();
                let u = (w >> 11) as f64 * UNIT;
                let mag = (lo + (hi - lo) * u).exp();
                if w & 1 == 1 {
                    -mag
                } else {
                    mag
                }
            })
            .collect();
        self.counter += (rows * cols) as u64;
        Matrix::new(rows, cols, data)
    }
}
