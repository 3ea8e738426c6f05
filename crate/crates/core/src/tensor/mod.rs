//! Dense row-major `f64` matrices and the keyed generator used for
//! correlated randomness.

mod prg;

pub use prg::{PrgSeed, RandomRange};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element-wise unary and binary operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Sign,
    /// `a * x + b`
    Affine(f64, f64),
}

/// Right-hand operand of [`Matrix::elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Matrix(&'a Matrix),
    Scalar(f64),
    None,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(6) {
            if r > 0 {
                write!(f, "; ")?;
            }
            let row = self.row(r);
            for (c, v) in row.iter().take(6).enumerate() {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
            if row.len() > 6 {
                write!(f, ", ..")?;
            }
        }
        if self.rows > 6 {
            write!(f, "; ..")?;
        }
        write!(f, "]")
    }
}

/// IEEE `x >= 0` sign with `sign(-0.0) == 1`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        Self::filled(1, 1, v)
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data).expect("non-empty rows")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        self.check_same_shape(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Applies `op` element-wise. Binary ops accept a same-shaped matrix or a
    /// scalar; unary ops ignore `rhs`.
    pub fn elementwise(&self, op: ElementOp, rhs: Operand<'_>) -> Result<Matrix> {
        fn binary(
            a: &Matrix,
            rhs: Operand<'_>,
            name: &'static str,
            f: fn(f64, f64) -> f64,
        ) -> Result<Matrix> {
            match rhs {
                Operand::Matrix(b) => a.zip_with(b, name, f),
                Operand::Scalar(s) => Ok(a.map(|v| f(v, s))),
                Operand::None => Err(Error::Config(format!("{name} needs a right-hand operand"))),
            }
        }
        match op {
            ElementOp::Add => binary(self, rhs, "add", |a, b| a + b),
            ElementOp::Sub => binary(self, rhs, "sub", |a, b| a - b),
            ElementOp::Mul => binary(self, rhs, "mul", |a, b| a * b),
            ElementOp::Div => {
                let has_zero = match rhs {
                    Operand::Matrix(b) => b.data.iter().any(|&v| v == 0.0),
                    Operand::Scalar(s) => s == 0.0,
                    Operand::None => false,
                };
                if has_zero {
                    return Err(Error::Domain("division by exact zero".into()));
                }
                binary(self, rhs, "div", |a, b| a / b)
            }
            ElementOp::Exp => Ok(self.map(f64::exp)),
            ElementOp::Sign => Ok(self.map(sign)),
            ElementOp::Affine(a, b) => Ok(self.map(|v| a * v + b)),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn div(&self, other: &Matrix) -> Result<Matrix> {
        self.elementwise(ElementOp::Div, Operand::Matrix(other))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn exp(&self) -> Matrix {
        self.map(f64::exp)
    }

    pub fn sign(&self) -> Matrix {
        self.map(sign)
    }

    /// Replaces every element with the sum of its row.
    pub fn rowsum_broadcast(&self) -> Matrix {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            let s: f64 = self.row(r).iter().sum();
            out.extend(std::iter::repeat(s).take(self.cols));
        }
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: out,
        }
    }

    /// Column sums as a `1 x cols` row vector.
    pub fn colsum(&self) -> Matrix {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Matrix {
            rows: 1,
            cols: self.cols,
            data: out,
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row_broadcast(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::Dimension {
                op: "add_row_broadcast",
                left: self.shape(),
                right: row.shape(),
            });
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (o, v) in out.data[r * self.cols..(r + 1) * self.cols]
                .iter_mut()
                .zip(&row.data)
            {
                *o += v;
            }
        }
        Ok(out)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Matrix> {
        if idx.is_empty() {
            return Err(Error::Config("row selection is empty".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::Config(format!(
                    "row {i} out of range ({} rows)",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }

    /// Horizontal concatenation.
    pub fn hcat(blocks: &[&Matrix]) -> Result<Matrix> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Config("hcat of zero blocks".into()))?;
        let rows = first.rows;
        for b in blocks {
            if b.rows != rows {
                return Err(Error::Dimension {
                    op: "hcat",
                    left: first.shape(),
                    right: b.shape(),
                });
            }
        }
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(r));
            }
        }
        Matrix::new(rows, cols, data)
    }

    /// Columns `start..end` as a new matrix.
    pub fn column_slice(&self, start: usize, end: usize) -> Result<Matrix> {
        if start >= end || end > self.cols {
            return Err(Error::Config(format!(
                "column range {start}..{end} invalid for {} columns",
                self.cols
            )));
        }
        Ok(Matrix::from_fn(self.rows, end - start, |r, c| {
            self.get(r, start + c)
        }))
    }

    /// Index of the largest element of each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Little-endian byte encoding of the data (shape not included).
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Matrix> {
        if bytes.len() != rows * cols * 8 {
            return Err(Error::Format(format!(
                "expected {} payload bytes for {rows}x{cols}, got {}",
                rows * cols * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Matrix::new(rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-10.0..10.0))
    }

    #[test]
    fn sign_treats_both_zeros_as_positive() {
        let m = Matrix::from_rows(&[[-2.0, 0.0], [3.0, -0.0]]);
        let s = m.elementwise(ElementOp::Sign, Operand::None).unwrap();
        assert_eq!(s, Matrix::from_rows(&[[-1.0, 1.0], [1.0, 1.0]]));
    }

    #[test]
    fn exp_and_affine() {
        let e = Matrix::scalar(0.0)
            .elementwise(ElementOp::Exp, Operand::None)
            .unwrap();
        assert_eq!(e, Matrix::scalar(1.0));
        let a = Matrix::from_rows(&[[1.0, -1.0]])
            .elementwise(ElementOp::Affine(0.5, 0.5), Operand::None)
            .unwrap();
        assert_eq!(a, Matrix::from_rows(&[[1.0, 0.0]]));
    }

    #[test]
    fn binary_ops_check_shapes_and_zero_division() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            a.elementwise(ElementOp::Add, Operand::Matrix(&b)),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            a.elementwise(ElementOp::Div, Operand::Scalar(0.0)),
            Err(Error::Domain(_))
        ));
        let d = Matrix::from_rows(&[[1.0, 0.5]]);
        let q = Matrix::from_rows(&[[3.0, 1.0]])
            .elementwise(ElementOp::Div, Operand::Matrix(&d))
            .unwrap();
        assert_eq!(q, Matrix::from_rows(&[[3.0, 2.0]]));
    }

    #[test]
    fn rowsum_broadcast_examples() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(
            m.rowsum_broadcast(),
            Matrix::from_rows(&[[3.0, 3.0], [7.0, 7.0]])
        );
        assert_eq!(Matrix::scalar(5.0).rowsum_broadcast(), Matrix::scalar(5.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 3, 4);
        let rs = m.rowsum_broadcast();
        for r in 0..3 {
            let mut oracle = 0.0;
            for c in 0..4 {
                oracle += m.get(r, c);
            }
            for c in 0..4 {
                assert_eq!(rs.get(r, c), rs.get(r, 0));
                assert!((rs.get(r, c) - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
            }
        }
    }

    #[test]
    fn matmul_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_matrix(&mut rng, 3, 3);
        assert_eq!(Matrix::identity(3).matmul(&m).unwrap(), m);
        let a = Matrix::from_rows(&[[1.0, 2.0]]);
        let b = Matrix::from_rows(&[[3.0], [4.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Matrix::scalar(11.0));
        assert!(b.matmul(&b).is_err());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_matrix(&mut rng, 5, 5);
        let b = random_matrix(&mut rng, 5, 5);
        let got = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..5 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((got.get(i, j) - s).abs() <= 1e-12 * s.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        let m = Matrix::from_rows(&[[0.2, 0.2, 0.2], [0.1, 0.5, 0.5]]);
        assert_eq!(m.argmax_rows(), vec![0, 1]);
    }

    #[test]
    fn hcat_and_slice_roundtrip() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[5.0], [6.0]]);
        let c = Matrix::hcat(&[&a, &b]).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[1.0, 2.0, 5.0], [3.0, 4.0, 6.0]]));
        assert_eq!(c.column_slice(0, 2).unwrap(), a);
        assert_eq!(c.column_slice(2, 3).unwrap(), b);
    }

    proptest! {
        #[test]
        fn sign_times_x_is_abs(v in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(sign(v) * v, v.abs());
        }

        #[test]
        fn rowsum_total_is_cols_times_rowsum(seed in 0u64..1000, r in 1usize..6, c in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, r, c);
            let rs = m.rowsum_broadcast();
            for i in 0..r {
                let direct: f64 = m.row(i).iter().sum();
                let total: f64 = rs.row(i).iter().sum();
                prop_assert!((total - c as f64 * direct).abs() <= 1e-12 * (c as f64 * direct).abs().max(1e-9));
            }
        }
    }
}
