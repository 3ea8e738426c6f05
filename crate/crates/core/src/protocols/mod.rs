//! Secure computation on additive and multiplicative sharings.
//!
//! Linear operations are local. Products of two shared values use
//! `z_i = x_i · (y_i + y_{i+1}) + x_{i+1} · y_i + α_i` followed by a
//! rotation, one round and three output-sized messages.

mod convert;
mod nonlinear;

pub use convert::{add2mul, mul2add, Add2MulOptions};
pub use nonlinear::{relu, reshare, softmax, Relu, SOFTMAX_ROW_TARGET};

use crate::error::{Error, Result};
use crate::runtime::{ProtocolTag, Session};
use crate::sharing::{rotate, AdditiveShare};
use crate::tensor::Matrix;

/// Which product [`mul`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MulKind {
    /// One operand is `1 x 1` and scales the other.
    Scalar,
    Hadamard,
    MatMul,
}

impl MulKind {
    fn tag(self) -> ProtocolTag {
        match self {
            MulKind::Scalar => ProtocolTag::ScalarMul,
            MulKind::Hadamard => ProtocolTag::Hadamard,
            MulKind::MatMul => ProtocolTag::MatMul,
        }
    }

    fn output_shape(self, x: (usize, usize), y: (usize, usize)) -> Result<(usize, usize)> {
        let mismatch = |op| Error::Dimension {
            op,
            left: x,
            right: y,
        };
        match self {
            MulKind::Scalar if x == (1, 1) => Ok(y),
            MulKind::Scalar if y == (1, 1) => Ok(x),
            MulKind::Scalar => Err(mismatch("scalar mul")),
            MulKind::Hadamard if x == y => Ok(x),
            MulKind::Hadamard => Err(mismatch("hadamard")),
            MulKind::MatMul if x.1 == y.0 => Ok((x.0, y.1)),
            MulKind::MatMul => Err(mismatch("matmul")),
        }
    }

    fn apply(self, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        match self {
            MulKind::Scalar if x.shape() == (1, 1) => Ok(y.scale(x.get(0, 0))),
            MulKind::Scalar => Ok(x.scale(y.get(0, 0))),
            MulKind::Hadamard => x.hadamard(y),
            MulKind::MatMul => x.matmul(y),
        }
    }
}

/// A public operand for [`mul_public`].
#[derive(Debug, Clone, Copy)]
pub enum Public<'a> {
    Scalar(f64),
    /// Element-wise factor of the same shape.
    Matrix(&'a Matrix),
}

pub fn add(a: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
    a.add(b)
}

pub fn sub(a: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
    a.sub(b)
}

/// Multiplies by a public value. Local.
pub fn mul_public(a: &AdditiveShare, c: Public<'_>) -> Result<AdditiveShare> {
    match c {
        Public::Scalar(v) => Ok(a.scale(v)),
        Public::Matrix(m) => a.hadamard_public(m),
    }
}

/// `scale · x + offset` for public scalars. Local.
pub fn affine_public(a: &AdditiveShare, scale: f64, offset: f64) -> AdditiveShare {
    a.affine(scale, offset)
}

/// Product of two sharings. One round; every party sends one output-shaped
/// matrix.
pub fn mul(
    sess: &mut Session,
    a: &AdditiveShare,
    b: &AdditiveShare,
    kind: MulKind,
) -> Result<AdditiveShare> {
    let (rows, cols) = kind.output_shape(a.shape(), b.shape())?;
    if a.owner != b.owner || a.owner != sess.id() {
        return Err(Error::Protocol("operands held by different parties".into()));
    }
    sess.invoke(kind.tag(), |s| {
        let alpha = s.ctx_mut().zero_sharing(rows, cols)?.alpha;
        let y_sum = b.part_a.add(&b.part_b)?;
        let z = kind
            .apply(&a.part_a, &y_sum)?
            .add(&kind.apply(&a.part_b, &b.part_a)?)?
            .add(&alpha)?;
        rotate(s, z)
    })
}

pub fn hadamard(sess: &mut Session, a: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
    mul(sess, a, b, MulKind::Hadamard)
}

pub fn matmul(sess: &mut Session, a: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
    mul(sess, a, b, MulKind::MatMul)
}
