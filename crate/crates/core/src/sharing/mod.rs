//! Replicated 2-out-of-3 sharings over reals.
//!
//! Party `P_i` holds parts `(x_i, x_{i+1})` of a secret. For additive
//! sharings `x = x_0 + x_1 + x_2`; for multiplicative sharings
//! `x = x_0 ⊙ x_1 ⊙ x_2`. Pairwise seeds follow the same cyclic pattern:
//! `P_i` holds `s_i` (shared with `P_{i-1}`) and `s_{i+1}` (shared with
//! `P_{i+1}`), so the two holders of part `j` are exactly the two holders of
//! seed `s_j`.

mod file;
mod ops;

pub use file::{read_share_file, write_share_file, SHARE_MAGIC};
pub(crate) use ops::{masked_part, rotate};
pub use ops::{
    reconstruct, reconstruct_mul, setup_context, share, share_from, Reveal, RevealPurpose,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, PrgSeed, RandomRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartyId(u8);

impl PartyId {
    pub const P0: PartyId = PartyId(0);
    pub const P1: PartyId = PartyId(1);
    pub const P2: PartyId = PartyId(2);
    pub const ALL: [PartyId; 3] = [Self::P0, Self::P1, Self::P2];

    pub fn new(index: usize) -> Result<Self> {
        if index < 3 {
            Ok(PartyId(index as u8))
        } else {
            Err(Error::Config(format!(
                "party index must be 0, 1 or 2, got {index}"
            )))
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn next(self) -> PartyId {
        PartyId((self.0 + 1) % 3)
    }

    #[inline]
    pub fn prev(self) -> PartyId {
        PartyId((self.0 + 2) % 3)
    }

    /// `self + k (mod 3)`.
    #[inline]
    pub fn offset(self, k: usize) -> PartyId {
        PartyId(((self.0 as usize + k) % 3) as u8)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Per-party correlated-randomness state after setup.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyContext {
    pub id: PartyId,
    /// `s_i`, shared with `P_{i-1}`.
    pub seed_prev: PrgSeed,
    /// `s_{i+1}`, shared with `P_{i+1}`.
    pub seed_next: PrgSeed,
    pub randomness_range: RandomRange,
}

/// This party's `α_i` of a fresh sharing of zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroSharing {
    pub alpha: Matrix,
}

impl PartyContext {
    /// `α_i = r_i - r_{i+1}` with `r_j` drawn from `s_j`. Local; both holders
    /// of every seed advance it by the same amount.
    pub fn zero_sharing(&mut self, rows: usize, cols: usize) -> Result<ZeroSharing> {
        let range = self.randomness_range;
        self.zero_sharing_in(rows, cols, &range)
    }

    pub fn zero_sharing_in(
        &mut self,
        rows: usize,
        cols: usize,
        range: &RandomRange,
    ) -> Result<ZeroSharing> {
        let r_own = self.seed_prev.draw(rows, cols, range, false)?;
        let r_next = self.seed_next.draw(rows, cols, range, false)?;
        Ok(ZeroSharing {
            alpha: r_own.sub(&r_next)?,
        })
    }

    /// Draws part `j` of a random matrix known to both holders of seed `s_j`.
    /// Returns `None` when this party does not hold `s_j`.
    pub(crate) fn seed_for_part(&mut self, part: PartyId) -> Option<&mut PrgSeed> {
        if part == self.id {
            Some(&mut self.seed_prev)
        } else if part == self.id.next() {
            Some(&mut self.seed_next)
        } else {
            None
        }
    }
}

/// `P_i`'s view `(x_i, x_{i+1})` of an additive sharing.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveShare {
    pub owner: PartyId,
    pub part_a: Matrix,
    pub part_b: Matrix,
}

/// `P_i`'s view `(x̂_i, x̂_{i+1})` of a multiplicative sharing.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicativeShare {
    pub owner: PartyId,
    pub part_a: Matrix,
    pub part_b: Matrix,
}

fn check_pair(owner: PartyId, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Integrity(format!(
            "{owner} share parts have different shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl AdditiveShare {
    pub fn new(owner: PartyId, part_a: Matrix, part_b: Matrix) -> Result<Self> {
        check_pair(owner, &part_a, &part_b)?;
        Ok(Self {
            owner,
            part_a,
            part_b,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.part_a.shape()
    }

    pub fn rows(&self) -> usize {
        self.part_a.rows()
    }

    pub fn cols(&self) -> usize {
        self.part_a.cols()
    }

    /// Part `j` of the sharing if this party holds it.
    pub fn part(&self, j: PartyId) -> Option<&Matrix> {
        if j == self.owner {
            Some(&self.part_a)
        } else if j == self.owner.next() {
            Some(&self.part_b)
        } else {
            None
        }
    }

    fn map_parts(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        Self {
            owner: self.owner,
            part_a: f(&self.part_a),
            part_b: f(&self.part_b),
        }
    }

    fn zip_parts(
        &self,
        other: &Self,
        f: impl Fn(&Matrix, &Matrix) -> Result<Matrix>,
    ) -> Result<Self> {
        if self.owner != other.owner {
            return Err(Error::Protocol(format!(
                "combining shares held by {} and {}",
                self.owner, other.owner
            )));
        }
        Ok(Self {
            owner: self.owner,
            part_a: f(&self.part_a, &other.part_a)?,
            part_b: f(&self.part_b, &other.part_b)?,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_parts(other, Matrix::add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_parts(other, Matrix::sub)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_parts(|m| m.scale(c))
    }

    /// Element-wise product with a public matrix.
    pub fn hadamard_public(&self, c: &Matrix) -> Result<Self> {
        Ok(Self {
            owner: self.owner,
            part_a: self.part_a.hadamard(c)?,
            part_b: self.part_b.hadamard(c)?,
        })
    }

    /// Adds a public matrix; only part 0 changes.
    pub fn add_public(&self, c: &Matrix) -> Result<Self> {
        c.check_same_shape(&self.part_a, "add_public")?;
        let mut out = self.clone();
        if let Some(p) = self.slot(PartyId::P0) {
            let m = if p == 0 {
                &mut out.part_a
            } else {
                &mut out.part_b
            };
            *m = m.add(c)?;
        }
        Ok(out)
    }

    pub fn add_public_scalar(&self, c: f64) -> Self {
        let (r, k) = self.shape();
        self.add_public(&Matrix::filled(r, k, c))
            .expect("same shape")
    }

    /// `a * x + b` for public scalars.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        self.scale(a).add_public_scalar(b)
    }

    /// `x × c` for a public right operand.
    pub fn matmul_public(&self, c: &Matrix) -> Result<Self> {
        Ok(Self {
            owner: self.owner,
            part_a: self.part_a.matmul(c)?,
            part_b: self.part_b.matmul(c)?,
        })
    }

    /// `c × x` for a public left operand.
    pub fn public_matmul(c: &Matrix, x: &Self) -> Result<Self> {
        Ok(Self {
            owner: x.owner,
            part_a: c.matmul(&x.part_a)?,
            part_b: c.matmul(&x.part_b)?,
        })
    }

    pub fn transpose(&self) -> Self {
        self.map_parts(Matrix::transpose)
    }

    pub fn rowsum_broadcast(&self) -> Self {
        self.map_parts(Matrix::rowsum_broadcast)
    }

    pub fn colsum(&self) -> Self {
        self.map_parts(Matrix::colsum)
    }

    /// Adds a shared `1 x cols` row vector to every row.
    pub fn add_row_broadcast(&self, row: &Self) -> Result<Self> {
        self.zip_parts(row, Matrix::add_row_broadcast)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            owner: self.owner,
            part_a: self.part_a.select_rows(idx)?,
            part_b: self.part_b.select_rows(idx)?,
        })
    }

    /// Columns `start..end`.
    pub fn column_slice(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            owner: self.owner,
            part_a: self.part_a.column_slice(start, end)?,
            part_b: self.part_b.column_slice(start, end)?,
        })
    }

    pub fn hcat(blocks: &[&Self]) -> Result<Self> {
        let owner = blocks
            .first()
            .ok_or_else(|| Error::Config("hcat of zero shares".into()))?
            .owner;
        if blocks.iter().any(|b| b.owner != owner) {
            return Err(Error::Protocol("hcat across different holders".into()));
        }
        let a: Vec<&Matrix> = blocks.iter().map(|b| &b.part_a).collect();
        let b: Vec<&Matrix> = blocks.iter().map(|b| &b.part_b).collect();
        Ok(Self {
            owner,
            part_a: Matrix::hcat(&a)?,
            part_b: Matrix::hcat(&b)?,
        })
    }

    /// 0 if part `j` is `part_a`, 1 if `part_b`.
    fn slot(&self, j: PartyId) -> Option<usize> {
        if j == self.owner {
            Some(0)
        } else if j == self.owner.next() {
            Some(1)
        } else {
            None
        }
    }
}

impl MultiplicativeShare {
    pub fn new(owner: PartyId, part_a: Matrix, part_b: Matrix) -> Result<Self> {
        check_pair(owner, &part_a, &part_b)?;
        Ok(Self {
            owner,
            part_a,
            part_b,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.part_a.shape()
    }

    pub fn has_zero(&self) -> bool {
        self.part_a
            .as_slice()
            .iter()
            .chain(self.part_b.as_slice())
            .any(|&v| v == 0.0)
    }

    /// Errors if any held part contains an exact zero.
    pub fn check_nonzero(&self) -> Result<()> {
        if self.has_zero() {
            return Err(Error::Integrity(format!(
                "{} multiplicative share contains a zero part",
                self.owner
            )));
        }
        Ok(())
    }

    pub fn map_parts(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        Self {
            owner: self.owner,
            part_a: f(&self.part_a),
            part_b: f(&self.part_b),
        }
    }

    /// Part-wise division; the quotient sharing reconstructs to `x / y`.
    pub fn div(&self, other: &Self) -> Result<Self> {
        if self.owner != other.owner {
            return Err(Error::Protocol(
                "dividing shares of different holders".into(),
            ));
        }
        Ok(Self {
            owner: self.owner,
            part_a: self.part_a.div(&other.part_a)?,
            part_b: self.part_b.div(&other.part_b)?,
        })
    }
}

/// Checks `P_i.part_b == P_{i+1}.part_a` bit-for-bit across the three views.
pub fn audit_replication(views: &[AdditiveShare; 3]) -> Result<()> {
    audit_pairs(
        views
            .iter()
            .map(|v| (v.owner, &v.part_a, &v.part_b))
            .collect(),
    )
}

pub fn audit_replication_mul(views: &[MultiplicativeShare; 3]) -> Result<()> {
    audit_pairs(
        views
            .iter()
            .map(|v| (v.owner, &v.part_a, &v.part_b))
            .collect(),
    )
}

fn audit_pairs(views: Vec<(PartyId, &Matrix, &Matrix)>) -> Result<()> {
    for (i, (owner, _, _)) in views.iter().enumerate() {
        if owner.index() != i {
            return Err(Error::Integrity(format!("view {i} belongs to {owner}")));
        }
    }
    for i in 0..3 {
        let (_, _, b) = views[i];
        let (_, a_next, _) = views[(i + 1) % 3];
        if b.as_slice() != a_next.as_slice() || b.shape() != a_next.shape() {
            return Err(Error::Integrity(format!(
                "P{i}.part_b differs from P{}.part_a",
                (i + 1) % 3
            )));
        }
    }
    Ok(())
}

/// Sum of the three distinct parts in index order `(x_0 + x_1) + x_2`.
pub fn open_additive(views: &[AdditiveShare; 3]) -> Result<Matrix> {
    views[0].part_a.add(&views[1].part_a)?.add(&views[2].part_a)
}

/// Product of the three distinct parts in index order.
pub fn open_multiplicative(views: &[MultiplicativeShare; 3]) -> Result<Matrix> {
    views[0]
        .part_a
        .hadamard(&views[1].part_a)?
        .hadamard(&views[2].part_a)
}

/// Dealer-style sharing for data at rest: `x_1`, `x_2` drawn uniform in
/// `range` from `seed`, `x_0 = x - x_1 - x_2`. Returns the three party views.
pub fn deal_additive(x: &Matrix, seed: u64, range: &RandomRange) -> Result<[AdditiveShare; 3]> {
    let mut prg = PrgSeed::new(seed);
    let (r, c) = x.shape();
    let x1 = prg.draw(r, c, range, false)?;
    let x2 = prg.draw(r, c, range, false)?;
    let x0 = x.sub(&x1)?.sub(&x2)?;
    let parts = [x0, x1, x2];
    Ok(PartyId::ALL.map(|p| AdditiveShare {
        owner: p,
        part_a: parts[p.index()].clone(),
        part_b: parts[p.next().index()].clone(),
    }))
}
