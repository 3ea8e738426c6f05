//! ReLU and Softmax built from the share conversions.

use super::{add2mul, hadamard, mul2add, Add2MulOptions};
use crate::error::{Error, Result};
use crate::runtime::{ProtocolTag, Session};
use crate::sharing::{AdditiveShare, MultiplicativeShare, PartyId};
use crate::tensor::{Matrix, RandomRange};

/// Output of [`relu`].
#[derive(Debug, Clone, PartialEq)]
pub struct Relu {
    /// Sharing of 1 where the input is non-negative, 0 elsewhere.
    pub deriv: AdditiveShare,
    /// Sharing of `max(0, x)`.
    pub value: AdditiveShare,
}

/// ReLU and its derivative. The signs of the multiplicative parts multiply
/// to the sign of the secret, so converting the part-wise signs back to
/// additive form yields `sign(x)`; `(sign(x) + 1) / 2` is the derivative
/// and its product with `x` the value. Five rounds, 19 elements per entry.
pub fn relu(sess: &mut Session, a: &AdditiveShare) -> Result<Relu> {
    sess.invoke(ProtocolTag::Relu, |s| {
        let m = add2mul(s, a, &Add2MulOptions::zero_tolerant())?;
        let signs = m.map_parts(Matrix::sign);
        let sign_add = mul2add(s, &signs)?;
        let deriv = sign_add.affine(0.5, 0.5);
        let value = hadamard(s, &deriv, a)?;
        Ok(Relu { deriv, value })
    })
}

/// Where softmax moves the row maximum of part 0. Measured on 50x50
/// inputs with `±2` masks: errors are flat between about 5 and 10 and grow
/// quickly outside that band.
pub const SOFTMAX_ROW_TARGET: f64 = 8.0;

/// Shifts each row so that its maximum becomes `target`.
fn shift_rows_to(m: &Matrix, target: f64) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let max = m.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for c in 0..m.cols() {
            out.set(r, c, m.get(r, c) - max + target);
        }
    }
    out
}

/// Row-wise softmax. Parts are exponentiated locally, which turns the
/// additive sharing of `x` into a multiplicative sharing of `e^x`. Six
/// rounds, 25 elements per entry.
///
/// Before exponentiating, each row of part 0 is shifted so its maximum is
/// [`SOFTMAX_ROW_TARGET`]. Both holders of part 0 compute the same shift
/// and softmax ignores per-row constants, so the result is unchanged.
/// After [`reshare`] part 0 carries the logits, so this keeps the
/// exponentials in a fixed band however large the logits are.
///
/// Zero-sharings inside use the session's softmax range. Inputs whose
/// parts exceed the exp guard are rejected; run wide sharings through
/// [`reshare`] first.
pub fn softmax(sess: &mut Session, a: &AdditiveShare) -> Result<AdditiveShare> {
    let guard = sess.config().exp_guard;
    let magnitude = a.part_a.max_abs().max(a.part_b.max_abs());
    if !(magnitude <= guard) {
        return Err(Error::Overflow { magnitude, guard });
    }
    let masks = sess.config().softmax_randomness;
    sess.invoke(ProtocolTag::Softmax, |s| {
        s.with_randomness(masks, |s| {
            let exp_part = |j: PartyId, m: &Matrix| {
                if j == PartyId::P0 {
                    shift_rows_to(m, SOFTMAX_ROW_TARGET).exp()
                } else {
                    m.exp()
                }
            };
            let e = MultiplicativeShare::new(
                a.owner,
                exp_part(a.owner, &a.part_a),
                exp_part(a.owner.next(), &a.part_b),
            )?;
            let e_add = mul2add(s, &e)?;
            let sums = e_add.rowsum_broadcast();
            let sums_mul = add2mul(s, &sums, &Add2MulOptions::default())?;
            let q = e.div(&sums_mul)?;
            mul2add(s, &q)
        })
    })
}

/// Replaces parts `x_1` and `x_2` with fresh values drawn uniformly from
/// `range`, leaving the secret unchanged. `y_1` and `y_2` come from the
/// seeds their holders share; `P_1` sends `x_1 - y_1` to `P_2` and `P_2`
/// sends `x_2 - y_2` to `P_0`, after which `P_0` and `P_2` both compute
/// `y_0 = x_0 + (x_1 - y_1) + (x_2 - y_2)`. One round, two elements per
/// entry.
pub fn reshare(
    sess: &mut Session,
    a: &AdditiveShare,
    range: &RandomRange,
) -> Result<AdditiveShare> {
    let me = sess.id();
    if a.owner != me {
        return Err(Error::Protocol(format!(
            "{me} cannot reshare a share held by {}",
            a.owner
        )));
    }
    range.validate()?;
    let (rows, cols) = a.shape();
    sess.invoke(ProtocolTag::Reshare, |s| {
        let mut fresh: [Option<Matrix>; 2] = [None, None];
        for (slot, part) in [PartyId::P1, PartyId::P2].into_iter().enumerate() {
            if let Some(seed) = s.ctx_mut().seed_for_part(part) {
                fresh[slot] = Some(seed.draw(rows, cols, range, false)?);
            }
        }
        let [y1, y2] = fresh;
        let missing = || Error::Protocol(format!("{me} lacks a fresh part"));
        match me.index() {
            0 => {
                let y1 = y1.ok_or_else(missing)?;
                let m1 = a.part_b.sub(&y1)?;
                let got = s.exchange(&[], &[(PartyId::P2, (rows, cols))])?;
                let y0 = a.part_a.add(&m1)?.add(&got[0])?;
                AdditiveShare::new(me, y0, y1)
            }
            1 => {
                let (y1, y2) = (y1.ok_or_else(missing)?, y2.ok_or_else(missing)?);
                let m1 = a.part_a.sub(&y1)?;
                s.exchange(&[(PartyId::P2, &m1)], &[])?;
                AdditiveShare::new(me, y1, y2)
            }
            _ => {
                let y2 = y2.ok_or_else(missing)?;
                let m2 = a.part_a.sub(&y2)?;
                let got = s.exchange(&[(PartyId::P0, &m2)], &[(PartyId::P1, (rows, cols))])?;
                let y0 = a.part_b.add(&got[0])?.add(&m2)?;
                AdditiveShare::new(me, y2, y0)
            }
        }
    })
}
