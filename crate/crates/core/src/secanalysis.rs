//! Range inference from a single masked share.
//!
//! A party that sees `x_0 = x + α` and knows priors for `x` and `α` can
//! intersect `[l_x, r_x]` with `[x_0 - r_α, x_0 - l_α]`. The prior survives
//! intact only when `x_0` lands in the safe interval `[r_x + l_α, l_x + r_α]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fewest trials [`monte_carlo_narrowing`] accepts.
pub const MIN_TRIALS: u64 = 10_000;

/// A closed interval `[low, high]` with `low <= high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorInterval {
    pub low: f64,
    pub high: f64,
}

impl PriorInterval {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low <= high) {
            return Err(Error::Config(format!(
                "interval [{low}, {high}] needs finite low <= high"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn length(&self) -> f64 {
        self.high - self.low
    }

    /// Range of `r_i - r_{i+1}` for `r_i` drawn from `[low, high]`.
    pub fn alpha_from_randomness(low: f64, high: f64) -> Result<Self> {
        let r = Self::new(low, high)?;
        Self::new(-r.length(), r.length())
    }
}

/// `[low, high]`, empty when `low > high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeInterval {
    pub low: f64,
    pub high: f64,
}

impl SafeInterval {
    pub fn is_empty(&self) -> bool {
        self.low > self.high
    }

    pub fn length(&self) -> f64 {
        (self.high - self.low).max(0.0)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }
}

pub fn safe_interval(x: &PriorInterval, alpha: &PriorInterval) -> SafeInterval {
    SafeInterval {
        low: x.high + alpha.low,
        high: x.low + alpha.high,
    }
}

/// Length of the zero-sharing range for randomness drawn from
/// `[low, high]`: `2 (high - low)`.
pub fn alpha_width_from_range(low: f64, high: f64) -> Result<f64> {
    Ok(PriorInterval::alpha_from_randomness(low, high)?.length())
}

/// `L_α / L_x`.
pub fn theta(x: &PriorInterval, alpha: &PriorInterval) -> Result<f64> {
    if x.length() == 0.0 {
        return Err(Error::Domain("prior of x has zero length".into()));
    }
    Ok(alpha.length() / x.length())
}

/// `1 - 2 / (θ + 1)`, clamped at 0 for `θ <= 1`.
pub fn non_narrowing_probability(x: &PriorInterval, alpha: &PriorInterval) -> Result<f64> {
    let t = theta(x, alpha)?;
    Ok((1.0 - 2.0 / (t + 1.0)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarrowingEstimate {
    pub trials: u64,
    pub hits: u64,
    pub frequency: f64,
    /// Wilson score interval at 95%.
    pub ci95: (f64, f64),
}

/// Wilson score interval for `hits` out of `trials` at normal quantile `z`.
pub fn wilson_interval(hits: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Draws `x` and `α` uniformly from their priors and counts how often the
/// intersection `[l_x, r_x] ∩ [x_0 - r_α, x_0 - l_α]` is the whole prior.
pub fn monte_carlo_narrowing(
    x: &PriorInterval,
    alpha: &PriorInterval,
    trials: u64,
    seed: u64,
) -> Result<NarrowingEstimate> {
    if trials < MIN_TRIALS {
        return Err(Error::Config(format!(
            "need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |iv: &PriorInterval| {
        if iv.length() == 0.0 {
            iv.low
        } else {
            rng.gen_range(iv.low..=iv.high)
        }
    };
    let mut hits = 0;
    for _ in 0..trials {
        let xv = uniform(x);
        let x0 = xv + uniform(alpha);
        let lo = x.low.max(x0 - alpha.high);
        let hi = x.high.min(x0 - alpha.low);
        if lo <= x.low && hi >= x.high {
            hits += 1;
        }
    }
    Ok(NarrowingEstimate {
        trials,
        hits,
        frequency: hits as f64 / trials as f64,
        ci95: wilson_interval(hits, trials, 1.959_963_984_540_054),
    })
}

/// Output of the `analyze` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub theta: f64,
    pub closed_form: f64,
    pub empirical: f64,
    pub ci95: [f64; 2],
    /// `[low, high]`; empty when `low > high`.
    pub safe_interval: [f64; 2],
}

/// Prior `x ∈ [lx, rx]`, randomness `r_i ∈ [lr, rr]`.
pub fn analyze(
    x: PriorInterval,
    randomness: (f64, f64),
    trials: u64,
    seed: u64,
) -> Result<AnalysisReport> {
    let alpha = PriorInterval::alpha_from_randomness(randomness.0, randomness.1)?;
    let est = monte_carlo_narrowing(&x, &alpha, trials, seed)?;
    let safe = safe_interval(&x, &alpha);
    Ok(AnalysisReport {
        theta: theta(&x, &alpha)?,
        closed_form: non_narrowing_probability(&x, &alpha)?,
        empirical: est.frequency,
        ci95: [est.ci95.0, est.ci95.1],
        safe_interval: [safe.low, safe.high],
    })
}
