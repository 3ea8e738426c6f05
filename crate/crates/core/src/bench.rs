//! Protocol benchmarks: cost, wall time and precision against plaintext.

use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::{hadamard, matmul, relu, reshare, softmax};
use crate::runtime::{
    run_inprocess, run_loopback_sockets, Outcome, Session, SessionConfig, TransportMode,
};
use crate::sharing::{reconstruct, share_from, PartyId, Reveal, RevealPurpose};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchProtocol {
    Matmul,
    Hadamard,
    Relu,
    Softmax,
}

impl BenchProtocol {
    pub const ALL: [BenchProtocol; 4] = [
        BenchProtocol::Matmul,
        BenchProtocol::Hadamard,
        BenchProtocol::Relu,
        BenchProtocol::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchProtocol::Matmul => "matmul",
            BenchProtocol::Hadamard => "hadamard",
            BenchProtocol::Relu => "relu",
            BenchProtocol::Softmax => "softmax",
        }
    }

    fn binary(self) -> bool {
        matches!(self, BenchProtocol::Matmul | BenchProtocol::Hadamard)
    }

    /// Plaintext result for inputs `x` (and `y` for binary protocols).
    pub fn oracle(self, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        match self {
            BenchProtocol::Matmul => x.matmul(y),
            BenchProtocol::Hadamard => x.hadamard(y),
            BenchProtocol::Relu => Ok(x.map(|v| v.max(0.0))),
            BenchProtocol::Softmax => Ok(softmax_plain(x)),
        }
    }
}

impl FromStr for BenchProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown protocol {s:?}; expected matmul, hadamard, relu or softmax"
                ))
            })
    }
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_plain(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = e.iter().sum();
        for (c, v) in e.iter().enumerate() {
            out.set(r, c, v / sum);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub protocol: BenchProtocol,
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    /// Element exponents are drawn from `[-span, span]`.
    pub exponent_span: u32,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config(
                "bench sizes must be non-empty and positive".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("bench repetitions must be at least 1".into()));
        }
        Ok(())
    }
}

/// One output row per size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub protocol: String,
    pub n: usize,
    pub exponent_span: u32,
    pub repetitions: usize,
    pub mean_ms: f64,
    /// Payload bytes of one invocation, all parties.
    pub bytes: u64,
    pub bits: u64,
    pub rounds: u32,
    pub mre: f64,
}

/// `rows x cols` values `±a × 10^δ` with `a` uniform in `[1, 10)` and `δ`
/// a uniform integer in `[-span, span]`.
pub fn random_inputs(rng: &mut impl Rng, rows: usize, cols: usize, span: u32) -> Matrix {
    let span = span as i32;
    Matrix::from_fn(rows, cols, |_, _| {
        let a: f64 = rng.gen_range(1.0..10.0);
        let delta = rng.gen_range(-span..=span);
        let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        s * a * 10f64.powi(delta)
    })
}

/// Mean over elements of `|got - want| / |want|`; absolute error where the
/// reference is exactly zero.
pub fn mean_relative_error(got: &Matrix, want: &Matrix) -> Result<f64> {
    got.check_same_shape(want, "mre")?;
    let total: f64 = got
        .as_slice()
        .iter()
        .zip(want.as_slice())
        .map(|(g, w)| {
            let d = (g - w).abs();
            if *w == 0.0 {
                d
            } else {
                d / w.abs()
            }
        })
        .sum();
    Ok(total / got.len() as f64)
}

struct Trial {
    x: Matrix,
    y: Matrix,
}

fn run_one(s: &mut Session, protocol: BenchProtocol, t: &Trial) -> Result<(Matrix, f64)> {
    let mut x = share_from(s, PartyId::P0, &t.x)?;
    if protocol == BenchProtocol::Softmax {
        // fed the same way the MLP feeds its output layer
        let narrow = s.config().softmax_randomness;
        x = reshare(s, &x, &narrow)?;
    }
    let y = if protocol.binary() {
        Some(share_from(s, PartyId::P1, &t.y)?)
    } else {
        None
    };
    let start = Instant::now();
    let z = match (protocol, &y) {
        (BenchProtocol::Matmul, Some(y)) => matmul(s, &x, y)?,
        (BenchProtocol::Hadamard, Some(y)) => hadamard(s, &x, y)?,
        (BenchProtocol::Relu, _) => relu(s, &x)?.value,
        (BenchProtocol::Softmax, _) => softmax(s, &x)?,
        _ => unreachable!("binary protocols always get a second operand"),
    };
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let opened = reconstruct(s, &z, Reveal::All, RevealPurpose::Diagnostic)?
        .ok_or_else(|| Error::Protocol("diagnostic opening missing".into()))?;
    Ok((opened, ms))
}

/// Runs the benchmark. Inputs come from `seed`; each size runs in its own
/// session.
pub fn run_bench(
    spec: &BenchSpec,
    config: &SessionConfig,
    mode: TransportMode,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.sizes.len());
    for (k, &n) in spec.sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32));
        let trials: Vec<Trial> = (0..spec.repetitions)
            .map(|_| Trial {
                x: random_inputs(&mut rng, n, n, spec.exponent_span),
                y: random_inputs(&mut rng, n, n, spec.exponent_span),
            })
            .collect();
        let program = |s: &mut Session| -> Result<Vec<(Matrix, f64)>> {
            trials
                .iter()
                .map(|t| run_one(s, spec.protocol, t))
                .collect()
        };
        let seeds = [
            seed.wrapping_add(1),
            seed.wrapping_add(2),
            seed.wrapping_add(3),
        ];
        let out: Outcome<Vec<(Matrix, f64)>> = match mode {
            TransportMode::InProcess => run_inprocess(config, seeds, program)?,
            TransportMode::Socket => run_loopback_sockets(config, seeds, program)?,
        };

        let stats: Vec<_> = out
            .protocol_stats()
            .into_iter()
            .filter(|s| s.protocol_name == spec.protocol.name())
            .collect();
        let first = stats
            .first()
            .ok_or_else(|| Error::Protocol("benchmark recorded no invocation".into()))?;
        if stats.iter().any(|s| s != first) {
            return Err(Error::Integrity(
                "invocations of one size differ in cost".into(),
            ));
        }

        let results = &out.parties[0].output;
        let mut mre = 0.0;
        let mut ms = 0.0;
        for (t, (got, elapsed)) in trials.iter().zip(results) {
            let want = spec.protocol.oracle(&t.x, &t.y)?;
            mre += mean_relative_error(got, &want)?;
            ms += elapsed;
        }
        let reps = spec.repetitions as f64;
        rows.push(BenchRow {
            protocol: spec.protocol.name().to_string(),
            n,
            exponent_span: spec.exponent_span,
            repetitions: spec.repetitions,
            mean_ms: ms / reps,
            bytes: first.bytes_total,
            bits: first.bits_total(),
            rounds: first.rounds,
            mre: mre / reps,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_follow_the_exponent_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_inputs(&mut rng, 40, 40, 2);
        for v in m.as_slice() {
            assert!(v.abs() >= 1e-2 && v.abs() < 1e3, "{v}");
        }
        let m0 = random_inputs(&mut rng, 20, 20, 0);
        assert!(m0.as_slice().iter().all(|v| (1.0..10.0).contains(&v.abs())));
        assert!(m0.as_slice().iter().any(|v| *v < 0.0));
    }

    #[test]
    fn mre_uses_absolute_error_at_zero() {
        let want = Matrix::from_rows(&[[2.0, 0.0]]);
        let got = Matrix::from_rows(&[[2.2, 0.1]]);
        let e = mean_relative_error(&got, &want).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
    }

    #[test]
    fn plain_softmax_is_shift_invariant() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [1001.0, 1002.0, 1003.0]]);
        let y = softmax_plain(&x);
        for c in 0..3 {
            assert!((y.get(0, c) - y.get(1, c)).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_row_reports_table_cost() {
        let spec = BenchSpec {
            protocol: BenchProtocol::Relu,
            sizes: vec![50],
            repetitions: 2,
            exponent_span: 0,
        };
        let rows = run_bench(
            &spec,
            &SessionConfig::default(),
            TransportMode::InProcess,
            9,
        )
        .unwrap();
        assert_eq!(rows[0].bits, 3_040_000);
        assert_eq!(rows[0].rounds, 5);
        assert!(rows[0].mre < 1e-8, "{}", rows[0].mre);
    }

    #[test]
    fn same_seed_same_report() {
        let spec = BenchSpec {
            protocol: BenchProtocol::Hadamard,
            sizes: vec![3, 4],
            repetitions: 3,
            exponent_span: 1,
        };
        let a = run_bench(
            &spec,
            &SessionConfig::default(),
            TransportMode::InProcess,
            1,
        )
        .unwrap();
        let b = run_bench(
            &spec,
            &SessionConfig::default(),
            TransportMode::InProcess,
            1,
        )
        .unwrap();
        let strip = |r: &[BenchRow]| {
            r.iter()
                .map(|r| (r.n, r.bytes, r.rounds, r.mre.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
    }
}
