//! Conversions between additive and multiplicative sharings.

use super::{hadamard, MulKind};
use crate::error::{Error, Result};
use crate::runtime::{ProtocolTag, Session};
use crate::sharing::{masked_part, rotate, AdditiveShare, MultiplicativeShare, PartyId};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Default)]
pub struct Add2MulOptions {
    /// Accept exact zeros in the derived part `x̂_2` (secret elements that
    /// are exactly zero).
    pub zero_tolerant: bool,
    /// Use these `(x̂_0, x̂_1)` instead of PRG draws. Testing hook; no seed
    /// advances.
    pub forced_parts: Option<(Matrix, Matrix)>,
}

impl Add2MulOptions {
    pub fn zero_tolerant() -> Self {
        Self {
            zero_tolerant: true,
            forced_parts: None,
        }
    }
}

/// Additive to multiplicative. `x̂_0` and `x̂_1` come from the seeds of
/// their two holders; `P_0` shares `t = 1 / (x̂_0 ⊙ x̂_1)`, and the parties
/// open `x̂_2 = x ⊙ t` to `P_1` and `P_2` directly from their local product
/// terms. Two rounds, seven elements per entry.
pub fn add2mul(
    sess: &mut Session,
    a: &AdditiveShare,
    opts: &Add2MulOptions,
) -> Result<MultiplicativeShare> {
    let me = sess.id();
    if a.owner != me {
        return Err(Error::Protocol(format!(
            "{me} cannot convert a share held by {}",
            a.owner
        )));
    }
    let shape = a.shape();
    if let Some((f0, f1)) = &opts.forced_parts {
        for f in [f0, f1] {
            if f.shape() != shape {
                return Err(Error::Dimension {
                    op: "add2mul forced parts",
                    left: f.shape(),
                    right: shape,
                });
            }
            if f.as_slice().contains(&0.0) {
                return Err(Error::Domain(
                    "forced multiplicative parts must be non-zero".into(),
                ));
            }
        }
    }
    let (lo, hi) = sess.config().mult_magnitude;

    sess.invoke(ProtocolTag::Add2Mul, |s| {
        // x̂_0 and x̂_1, for whichever of them this party holds a seed for.
        let mut drawn: [Option<Matrix>; 2] = [None, None];
        for (slot, part) in [PartyId::P0, PartyId::P1].into_iter().enumerate() {
            if let Some((f0, f1)) = &opts.forced_parts {
                if s.ctx().id == part || s.ctx().id.next() == part {
                    drawn[slot] = Some(if slot == 0 { f0.clone() } else { f1.clone() });
                }
            } else if let Some(seed) = s.ctx_mut().seed_for_part(part) {
                drawn[slot] = Some(seed.draw_log_uniform(shape.0, shape.1, lo, hi)?);
            }
        }

        // Round 1: P_0 shares t.
        let t_input = match (&drawn[0], &drawn[1]) {
            (Some(p0), Some(p1)) if me == PartyId::P0 => Some(p0.hadamard(p1)?.map(|v| 1.0 / v)),
            _ => None,
        };
        let t_part = masked_part(s, PartyId::P0, t_input.as_ref(), shape)?;
        let t = rotate(s, t_part)?;

        // Round 2: this party's term of x ⊙ t goes straight to whoever
        // needs it to open x̂_2.
        let alpha = s.ctx_mut().zero_sharing(shape.0, shape.1)?.alpha;
        let z = MulKind::Hadamard
            .apply(&a.part_a, &t.part_a.add(&t.part_b)?)?
            .add(&a.part_b.hadamard(&t.part_a)?)?
            .add(&alpha)?;
        let x2 = match me.index() {
            0 => {
                s.exchange(&[(PartyId::P1, &z), (PartyId::P2, &z)], &[])?;
                None
            }
            1 => {
                let got = s.exchange(
                    &[(PartyId::P2, &z)],
                    &[(PartyId::P0, shape), (PartyId::P2, shape)],
                )?;
                Some(got[0].add(&z)?.add(&got[1])?)
            }
            _ => {
                let got = s.exchange(
                    &[(PartyId::P1, &z)],
                    &[(PartyId::P0, shape), (PartyId::P1, shape)],
                )?;
                Some(got[0].add(&got[1])?.add(&z)?)
            }
        };

        if let Some(x2) = &x2 {
            if !opts.zero_tolerant && x2.as_slice().contains(&0.0) {
                return Err(Error::Integrity(
                    "multiplicative part is zero; the secret has a zero element".into(),
                ));
            }
        }
        let [d0, d1] = drawn;
        let missing = || Error::Protocol(format!("{me} lacks a multiplicative part"));
        let (part_a, part_b) = match me.index() {
            0 => (d0.ok_or_else(missing)?, d1.ok_or_else(missing)?),
            1 => (d1.ok_or_else(missing)?, x2.ok_or_else(missing)?),
            _ => (x2.ok_or_else(missing)?, d0.ok_or_else(missing)?),
        };
        MultiplicativeShare::new(me, part_a, part_b)
    })
}

/// Multiplicative to additive. `P_0` shares `x̂_0 ⊙ x̂_1` and `P_2` shares
/// `x̂_2` in the same round; one secure product finishes. Two rounds, nine
/// elements per entry.
pub fn mul2add(sess: &mut Session, a: &MultiplicativeShare) -> Result<AdditiveShare> {
    let me = sess.id();
    if a.owner != me {
        return Err(Error::Protocol(format!(
            "{me} cannot convert a share held by {}",
            a.owner
        )));
    }
    let shape = a.shape();
    sess.invoke(ProtocolTag::Mul2Add, |s| {
        let t_input = if me == PartyId::P0 {
            Some(a.part_a.hadamard(&a.part_b)?)
        } else {
            None
        };
        let u_input = (me == PartyId::P2).then_some(&a.part_a);
        let t_part = masked_part(s, PartyId::P0, t_input.as_ref(), shape)?;
        let u_part = masked_part(s, PartyId::P2, u_input, shape)?;
        let got = s.exchange(
            &[(me.prev(), &t_part), (me.prev(), &u_part)],
            &[(me.next(), shape), (me.next(), shape)],
        )?;
        let [t_next, u_next]: [Matrix; 2] = got
            .try_into()
            .map_err(|_| Error::Protocol("expected two parts".into()))?;
        let t = AdditiveShare::new(me, t_part, t_next)?;
        let u = AdditiveShare::new(me, u_part, u_next)?;
        hadamard(s, &t, &u)
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::runtime::{run_inprocess, SessionConfig};
    use crate::sharing::{
        audit_replication_mul, open_multiplicative, reconstruct_mul, share_from, Reveal,
        RevealPurpose,
    };
    use crate::tensor::sign;
    use proptest::prelude::*;

    #[test]
    fn forced_parts_give_hand_computed_third_part() {
        let out = run(|s| {
            let x = share_from(s, PartyId::P0, &Matrix::scalar(6.0))?;
            let opts = Add2MulOptions {
                zero_tolerant: false,
                forced_parts: Some((Matrix::scalar(2.0), Matrix::scalar(3.0))),
            };
            add2mul(s, &x, &opts)
        });
        let views = out.into_outputs();
        audit_replication_mul(&views).unwrap();
        let x2 = views[1].part_b.get(0, 0);
        assert!((x2 - 1.0).abs() < 1e-9);
        assert!((open_multiplicative(&views).unwrap().get(0, 0) - 6.0).abs() < 1e-9 * 6.0);
    }

    #[test]
    fn zero_secret_needs_zero_tolerance() {
        let out = run(|s| {
            let x = share_from(s, PartyId::P1, &Matrix::from_rows(&[[0.0, 2.0]]))?;
            add2mul(s, &x, &Add2MulOptions::zero_tolerant())
        });
        let views = out.into_outputs();
        // the additive parts of 0 cancel only to rounding, so x̂_2 is tiny
        // rather than exactly zero; either way the product is ~0
        let prod = open_multiplicative(&views).unwrap();
        assert!(prod.get(0, 0).abs() < 1e-10);

        let err = run_inprocess(&SessionConfig::default(), SEEDS, |s| {
            let x = AdditiveShare::new(s.id(), Matrix::scalar(0.0), Matrix::scalar(0.0))?;
            add2mul(s, &x, &Add2MulOptions::default())
        })
        .unwrap_err();
        assert!(matches!(err.root(), Error::Integrity(_)), "{err}");

        let ok = run(|s| {
            let x = AdditiveShare::new(s.id(), Matrix::scalar(0.0), Matrix::scalar(0.0))?;
            add2mul(s, &x, &Add2MulOptions::zero_tolerant())
        });
        assert_eq!(
            open_multiplicative(&ok.into_outputs()).unwrap().get(0, 0),
            0.0
        );
    }

    #[test]
    fn mul2add_of_fixed_parts() {
        let parts = [2.0, 3.0, 1.0].map(Matrix::scalar);
        let out = run(|s| {
            let me = s.id();
            let m = MultiplicativeShare::new(
                me,
                parts[me.index()].clone(),
                parts[me.next().index()].clone(),
            )?;
            let z = mul2add(s, &m)?;
            open(s, &z)
        });
        assert!((out.outputs()[0].get(0, 0) - 6.0).abs() < 1e-9 * 6.0);
    }

    #[test]
    fn round_trip_through_multiplicative_form() {
        let x = Matrix::from_fn(20, 20, |i, j| {
            ((i * 20 + j) as f64 * 0.37).sin() * 3.0 + 0.01
        });
        let out = run(|s| {
            let a = share_from(s, PartyId::P2, &x)?;
            let m = add2mul(s, &a, &Add2MulOptions::default())?;
            let back = mul2add(s, &m)?;
            let direct = reconstruct_mul(s, &m, Reveal::All, RevealPurpose::Diagnostic)?.unwrap();
            Ok((open(s, &back)?, direct))
        });
        let (back, direct) = out.outputs()[0];
        assert_close(back, &x, 1e-8);
        assert_close(direct, &x, 1e-8);
    }

    #[test]
    fn conversion_costs() {
        let out = run(|s| {
            let a = share_from(s, PartyId::P0, &Matrix::filled(30, 30, 1.5))?;
            let m = add2mul(s, &a, &Add2MulOptions::default())?;
            let b = share_from(s, PartyId::P0, &Matrix::filled(50, 50, 1.5))?;
            let mb = add2mul(s, &b, &Add2MulOptions::default())?;
            mul2add(s, &mb)?;
            Ok(m)
        });
        let st: Vec<_> = out
            .protocol_stats()
            .into_iter()
            .filter(|s| s.protocol_name != "share")
            .collect();
        assert_eq!(
            (
                st[0].protocol_name.as_str(),
                st[0].bits_total(),
                st[0].rounds
            ),
            ("add2mul", 403_200, 2)
        );
        assert_eq!(
            (
                st[2].protocol_name.as_str(),
                st[2].bits_total(),
                st[2].rounds
            ),
            ("mul2add", 1_440_000, 2)
        );
    }

    #[test]
    fn strict_mode_failure_reaches_every_party() {
        let err = run_inprocess(&SessionConfig::default(), SEEDS, |s| {
            let x = share_from(s, PartyId::P0, &Matrix::scalar(1.0))?;
            let zero = x.sub(&x)?;
            add2mul(s, &zero, &Add2MulOptions::default())
        })
        .unwrap_err();
        assert!(matches!(err.root(), Error::Integrity(_)), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn signs_of_parts_multiply_to_sign_of_secret(vals in proptest::collection::vec(prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64], 12), seed in any::<u64>()) {
            let x = Matrix::new(3, 4, vals).unwrap();
            let out = run_inprocess(&SessionConfig::default(), [seed, seed ^ 1, seed ^ 2], |s| {
                let a = share_from(s, PartyId::P0, &x)?;
                add2mul(s, &a, &Add2MulOptions::default())
            }).unwrap();
            let v = out.into_outputs();
            for k in 0..12 {
                let (r, c) = (k / 4, k % 4);
                let prod = sign(v[0].part_a.get(r, c)) * sign(v[1].part_a.get(r, c)) * sign(v[2].part_a.get(r, c));
                prop_assert_eq!(prod, sign(x.get(r, c)));
            }
        }
    }
}
