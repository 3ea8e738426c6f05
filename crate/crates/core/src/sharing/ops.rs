//! Interactive sharing and opening.

use serde::{Deserialize, Serialize};

use super::{AdditiveShare, MultiplicativeShare, PartyContext, PartyId};
use crate::error::{Error, Result};
use crate::runtime::{ProtocolTag, Session};
use crate::tensor::{Matrix, PrgSeed, RandomRange};

/// Who learns an opened value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reveal {
    All,
    To(PartyId),
    Pair(PartyId, PartyId),
}

impl Reveal {
    pub fn targets(self) -> Vec<PartyId> {
        match self {
            Reveal::All => PartyId::ALL.to_vec(),
            Reveal::To(p) => vec![p],
            Reveal::Pair(a, b) if a == b => vec![a],
            Reveal::Pair(a, b) => {
                let mut v = vec![a, b];
                v.sort();
                v
            }
        }
    }
}

/// Why a value is being opened; every opening is logged with one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealPurpose {
    /// Final output of a computation requested by the caller.
    Output,
    /// Per-sample loss terms, opened to the evaluator.
    Loss,
    /// Class scores opened to the querying user.
    Prediction,
    /// Benchmark or test verification.
    Diagnostic,
    /// Held-out labels opened to the evaluator to score predictions.
    Evaluation,
}

/// The context `P_id` ends up with after seed setup with the given seeds.
pub fn setup_context(id: PartyId, seeds: [u64; 3], randomness_range: RandomRange) -> PartyContext {
    PartyContext {
        id,
        seed_prev: PrgSeed::new(seeds[id.index()]),
        seed_next: PrgSeed::new(seeds[id.next().index()]),
        randomness_range,
    }
}

/// Turns this party's `z_i` into a replicated sharing: send `z_i` to
/// `P_{i-1}`, receive `z_{i+1}` from `P_{i+1}`.
pub(crate) fn rotate(sess: &mut Session, z: Matrix) -> Result<AdditiveShare> {
    let me = sess.id();
    let shape = z.shape();
    let got = sess.exchange(&[(me.prev(), &z)], &[(me.next(), shape)])?;
    let next = got.into_iter().next().expect("one message");
    AdditiveShare::new(me, z, next)
}

/// This party's contribution when `owner` shares `x`: `x + α_owner` at the
/// owner, `α_i` elsewhere. Local.
pub(crate) fn masked_part(
    sess: &mut Session,
    owner: PartyId,
    x: Option<&Matrix>,
    shape: (usize, usize),
) -> Result<Matrix> {
    let me = sess.id();
    let alpha = sess.ctx_mut().zero_sharing(shape.0, shape.1)?.alpha;
    if me == owner {
        let x =
            x.ok_or_else(|| Error::Protocol(format!("{me} owns the secret but supplied none")))?;
        if x.shape() != shape {
            return Err(Error::Dimension {
                op: "share",
                left: x.shape(),
                right: shape,
            });
        }
        x.add(&alpha)
    } else {
        Ok(alpha)
    }
}

/// `owner` secret-shares `x`. Every party passes the shape; only the owner
/// passes the value. One round, `3·rows·cols` elements.
pub fn share(
    sess: &mut Session,
    owner: PartyId,
    x: Option<&Matrix>,
    shape: (usize, usize),
) -> Result<AdditiveShare> {
    sess.invoke(ProtocolTag::Share, |s| {
        let part = masked_part(s, owner, x, shape)?;
        rotate(s, part)
    })
}

/// [`share`] where every party has a value of the right shape at hand but
/// only `owner`'s is used.
pub fn share_from(sess: &mut Session, owner: PartyId, x: &Matrix) -> Result<AdditiveShare> {
    let input = (sess.id() == owner).then_some(x);
    share(sess, owner, input, x.shape())
}

/// Each target `t` lacks part `t-1`, which `P_{t-1}` holds as `part_a`.
fn open_round(sess: &mut Session, part_a: &Matrix, targets: &[PartyId]) -> Result<Option<Matrix>> {
    let me = sess.id();
    let shape = part_a.shape();
    let send_to: Vec<(PartyId, &Matrix)> = targets
        .iter()
        .filter(|t| t.prev() == me)
        .map(|t| (*t, part_a))
        .collect();
    let recv: Vec<(PartyId, (usize, usize))> = if targets.contains(&me) {
        vec![(me.prev(), shape)]
    } else {
        Vec::new()
    };
    let got = sess.exchange(&send_to, &recv)?;
    Ok(got.into_iter().next())
}

/// Parts in index order, given the owner's two parts and the received one.
fn ordered(me: PartyId, a: &Matrix, b: &Matrix, missing: Matrix) -> [Matrix; 3] {
    let mut parts: [Option<Matrix>; 3] = Default::default();
    parts[me.index()] = Some(a.clone());
    parts[me.next().index()] = Some(b.clone());
    parts[me.prev().index()] = Some(missing);
    parts.map(|p| p.expect("all parts placed"))
}

/// Opens an additive sharing to `reveal`'s targets, who receive `Some(x)`
/// with `x = (x_0 + x_1) + x_2`; everyone else receives `None`.
pub fn reconstruct(
    sess: &mut Session,
    sh: &AdditiveShare,
    reveal: Reveal,
    purpose: RevealPurpose,
) -> Result<Option<Matrix>> {
    let me = sess.id();
    if sh.owner != me {
        return Err(Error::Protocol(format!(
            "{me} cannot open a share held by {}",
            sh.owner
        )));
    }
    let targets = reveal.targets();
    sess.record_reveal(purpose, targets.clone(), sh.shape());
    sess.invoke(ProtocolTag::Reconstruct, |s| {
        let Some(missing) = open_round(s, &sh.part_a, &targets)? else {
            return Ok(None);
        };
        let [x0, x1, x2] = ordered(me, &sh.part_a, &sh.part_b, missing);
        Ok(Some(x0.add(&x1)?.add(&x2)?))
    })
}

/// Opens a multiplicative sharing; the product is taken in index order.
pub fn reconstruct_mul(
    sess: &mut Session,
    sh: &MultiplicativeShare,
    reveal: Reveal,
    purpose: RevealPurpose,
) -> Result<Option<Matrix>> {
    let me = sess.id();
    if sh.owner != me {
        return Err(Error::Protocol(format!(
            "{me} cannot open a share held by {}",
            sh.owner
        )));
    }
    sh.check_nonzero()?;
    let targets = reveal.targets();
    sess.record_reveal(purpose, targets.clone(), sh.shape());
    sess.invoke(ProtocolTag::ReconstructMul, |s| {
        let Some(missing) = open_round(s, &sh.part_a, &targets)? else {
            return Ok(None);
        };
        if missing.as_slice().contains(&0.0) {
            return Err(Error::Integrity(format!(
                "{} sent a zero multiplicative part",
                me.prev()
            )));
        }
        let [x0, x1, x2] = ordered(me, &sh.part_a, &sh.part_b, missing);
        Ok(Some(x0.hadamard(&x1)?.hadamard(&x2)?))
    })
}
