use std::sync::Barrier;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trishare::bench::random_inputs;
use trishare::protocols::{
    add, add2mul, hadamard, matmul, mul, mul2add, mul_public, relu, reshare, softmax,
    Add2MulOptions, MulKind, Public,
};
use trishare::runtime::{
    read_frame_log, replay, run_inprocess, run_loopback_sockets, write_frame_log, NetProfile,
    Outcome, Session, SessionConfig,
};
use trishare::sharing::{reconstruct, share_from, AdditiveShare, PartyId, Reveal, RevealPurpose};
use trishare::tensor::Matrix;
use trishare::Result;

fn open(s: &mut Session, sh: &AdditiveShare) -> Result<Matrix> {
    Ok(reconstruct(s, sh, Reveal::All, RevealPurpose::Diagnostic)?.expect("opened to all"))
}

fn inputs(n: usize) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    (
        random_inputs(&mut rng, n, n, 1),
        random_inputs(&mut rng, n, n, 1),
    )
}

/// Every protocol once, all outputs opened.
fn suite(s: &mut Session, x: &Matrix, y: &Matrix) -> Result<Vec<Matrix>> {
    let a = share_from(s, PartyId::P0, x)?;
    let b = share_from(s, PartyId::P1, y)?;
    let mut out = vec![
        open(s, &add(&a, &b)?)?,
        open(s, &mul_public(&a, Public::Scalar(0.5))?)?,
    ];
    let h = hadamard(s, &a, &b)?;
    out.push(open(s, &h)?);
    let m = matmul(s, &a, &b)?;
    out.push(open(s, &m)?);
    let scalar = share_from(s, PartyId::P2, &Matrix::scalar(3.0))?;
    let scaled = mul(s, &scalar, &a, MulKind::Scalar)?;
    out.push(open(s, &scaled)?);
    let mult = add2mul(s, &a, &Add2MulOptions::default())?;
    let back = mul2add(s, &mult)?;
    out.push(open(s, &back)?);
    let r = relu(s, &a)?;
    out.push(open(s, &r.value)?);
    out.push(open(s, &r.deriv)?);
    let narrow = s.config().softmax_randomness;
    let z = reshare(s, &a, &narrow)?;
    out.push(open(s, &z)?);
    let sm = softmax(s, &z)?;
    out.push(open(s, &sm)?);
    Ok(out)
}

fn bits(ms: &[Matrix]) -> Vec<Vec<u64>> {
    ms.iter()
        .map(|m| m.as_slice().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn socket_and_inprocess_are_bit_identical() {
    let (x, y) = inputs(8);
    let cfg = SessionConfig::default();
    let seeds = [11, 22, 33];
    let a = run_inprocess(&cfg, seeds, |s| suite(s, &x, &y)).unwrap();
    let b = run_loopback_sockets(&cfg, seeds, |s| suite(s, &x, &y)).unwrap();
    for p in 0..3 {
        assert_eq!(
            bits(&a.parties[p].output),
            bits(&b.parties[p].output),
            "party {p}"
        );
    }
    assert_eq!(a.combined_stats(), b.combined_stats());
}

#[test]
fn same_seeds_same_transcript() {
    let (x, y) = inputs(5);
    let cfg = SessionConfig {
        record_frames: true,
        ..SessionConfig::default()
    };
    let run = || run_inprocess(&cfg, [4, 5, 6], |s| suite(s, &x, &y)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(bits(&a.parties[0].output), bits(&b.parties[0].output));
    for p in 0..3 {
        assert_eq!(a.parties[p].report.frames, b.parties[p].report.frames);
    }
    let c = run_inprocess(&cfg, [4, 5, 7], |s| suite(s, &x, &y)).unwrap();
    assert_ne!(a.parties[0].report.frames, c.parties[0].report.frames);
}

#[test]
fn protocol_outputs_are_correct() {
    let (x, y) = inputs(6);
    let out = run_inprocess(&SessionConfig::default(), [1, 2, 3], |s| suite(s, &x, &y)).unwrap();
    let got = &out.parties[2].output;
    let close = |g: &Matrix, w: &Matrix| {
        for (a, b) in g.as_slice().iter().zip(w.as_slice()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    };
    close(&got[0], &x.add(&y).unwrap());
    close(&got[2], &x.hadamard(&y).unwrap());
    close(&got[3], &x.matmul(&y).unwrap());
    close(&got[4], &x.scale(3.0));
    close(&got[5], &x);
    close(&got[6], &x.map(|v| v.max(0.0)));
    close(&got[9], &trishare::bench::softmax_plain(&x));
}

#[test]
fn frame_log_replay_reproduces_stats() {
    let (x, y) = inputs(4);
    let cfg = SessionConfig {
        record_frames: true,
        ..SessionConfig::default()
    };
    let out: Outcome<_> = run_inprocess(&cfg, [7, 8, 9], |s| suite(s, &x, &y)).unwrap();
    let mut frames = Vec::new();
    for p in &out.parties {
        frames.extend(p.report.frames.iter().cloned());
    }
    let mut buf = Vec::new();
    write_frame_log(&mut buf, &frames).unwrap();
    let parsed = read_frame_log(buf.as_slice()).unwrap();
    assert_eq!(parsed, frames);

    let want: Vec<_> = out
        .combined_stats()
        .into_iter()
        .filter(|s| s.bytes_total > 0)
        .collect();
    assert_eq!(replay(&parsed), want);
}

#[test]
fn mul_on_ten_by_ten_costs_one_round() {
    let (x, y) = inputs(10);
    let out = run_inprocess(&SessionConfig::default(), [1, 2, 3], |s| {
        let a = share_from(s, PartyId::P0, &x)?;
        let b = share_from(s, PartyId::P1, &y)?;
        let before = s.stats_log().len();
        add(&a, &b)?;
        assert_eq!(s.stats_log().len(), before);
        hadamard(s, &a, &b)?;
        Ok(())
    })
    .unwrap();
    let last = out.protocol_stats().pop().unwrap();
    assert_eq!(last.protocol_name, "hadamard");
    assert_eq!((last.rounds, last.bytes_total), (1, 2400));
}

/// Wall time of `op` on a sharing of `x`: from a common start, after the
/// input is in place, until every party has its output.
fn timed_invocation(
    cfg: &SessionConfig,
    x: &Matrix,
    op: impl Fn(&mut Session, &AdditiveShare) -> Result<()> + Sync,
) -> f64 {
    let barrier = Barrier::new(3);
    let out = run_inprocess(cfg, [1, 2, 3], |s| {
        let a = share_from(s, PartyId::P0, x)?;
        let narrow = s.config().softmax_randomness;
        let a = reshare(s, &a, &narrow)?;
        barrier.wait();
        let start = Instant::now();
        op(s, &a)?;
        Ok((start, Instant::now()))
    })
    .unwrap();
    let start = out.outputs().iter().map(|o| o.0).min().unwrap();
    let end = out.outputs().iter().map(|o| o.1).max().unwrap();
    (end - start).as_secs_f64() * 1e3
}

#[test]
fn latency_follows_round_count() {
    let (x, _) = inputs(4);
    let cfg = SessionConfig {
        profile: NetProfile {
            rtt_ms: 40.0,
            bandwidth_bps: None,
        },
        ..SessionConfig::default()
    };
    let relu_ms = timed_invocation(&cfg, &x, |s, a| relu(s, a).map(|_| ()));
    let softmax_ms = timed_invocation(&cfg, &x, |s, a| softmax(s, a).map(|_| ()));
    let mul_ms = timed_invocation(&cfg, &x, |s, a| hadamard(s, a, a).map(|_| ()));
    assert!(relu_ms >= 100.0, "relu {relu_ms} ms");
    assert!(softmax_ms >= 120.0, "softmax {softmax_ms} ms");
    assert!((20.0..60.0).contains(&mul_ms), "hadamard {mul_ms} ms");
}

#[test]
fn bandwidth_adds_serialization_delay() {
    let (x, y) = inputs(50);
    let cfg = SessionConfig {
        profile: NetProfile {
            rtt_ms: 0.0,
            bandwidth_bps: Some(1e6),
        },
        ..SessionConfig::default()
    };
    let out = run_inprocess(&cfg, [1, 2, 3], |s| {
        let a = share_from(s, PartyId::P0, &x)?;
        let b = share_from(s, PartyId::P1, &y)?;
        let t = Instant::now();
        hadamard(s, &a, &b)?;
        Ok(t.elapsed().as_secs_f64())
    })
    .unwrap();
    // 2500 elements of 64 bits on one link at 1 Mbit/s
    for secs in out.outputs() {
        assert!(*secs >= 0.16, "{secs}");
    }
}
