//! Dense row-major matrices and the segment primitives used by message passing.
//!
//! Everything here is value-level: no gradient bookkeeping. The autodiff tape
//! in [`crate::autodiff`] is built on top of these kernels, and the reference
//! baselines (RGCN, degree-RGCN) call them directly.
//!
//! Matrices are generic over the float type. `f64` is the default and the only
//! precision the tape records; `f32` is available for value-only work.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Float> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Column vector from a flat slice.
    pub fn column(values: Vec<T>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single entry of a 1x1 matrix.
    pub fn item(&self) -> Option<T> {
        (self.shape() == (1, 1)).then(|| self.data[0])
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "t_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let a_row = self.row(p);
            let b_row = other.row(p);
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_t(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, n) = (self.rows, other.rows);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a = self.row(i);
            for j in 0..n {
                out.push(dot(a, other.row(j)));
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix<T>, f: impl Fn(T, T) -> T) -> Result<Matrix<T>> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                left: self.shape(),
                right: other.shape(),
            });
        }
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

    pub fn add(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: T) -> Matrix<T> {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Accumulates `s * other` into `self`.
    pub fn axpy(&mut self, s: T, other: &Matrix<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> T {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    /// Rows picked by index, in the given order.
    pub fn gather_rows(&self, index: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(index.len() * self.cols);
        for &i in index {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: index.len(),
            cols: self.cols,
            data,
        }
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::ShapeMismatch {
                op: "hcat",
                left: (rows, 0),
                right: bad.shape(),
            });
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Vertical concatenation.
    pub fn vcat(parts: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if let Some(bad) = parts.iter().find(|m| m.cols != cols) {
            return Err(Error::ShapeMismatch {
                op: "vcat",
                left: (0, cols),
                right: bad.shape(),
            });
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix<T> {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn cast<U: Float>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from(*v).unwrap()).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Elementwise `max(x, slope·x)`.
pub fn leaky_relu<T: Float>(x: &Matrix<T>, slope: T) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

/// Derivative of [`leaky_relu`]; the kink at 0 takes the `slope` branch.
#[inline]
pub fn leaky_relu_grad<T: Float>(x: T, slope: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        slope
    }
}

fn check_segments(segments: &[usize], num_segments: usize) -> Result<()> {
    if let Some(&bad) = segments.iter().find(|&&s| s >= num_segments) {
        return Err(Error::IndexOutOfRange {
            what: "segment",
            index: bad,
            limit: num_segments,
        });
    }
    Ok(())
}

/// Softmax taken independently within each segment.
///
/// Each segment is shifted by its own maximum before exponentiation, so
/// unbounded logits are safe. Entries in different segments never interact.
pub fn segment_softmax<T: Float>(
    logits: &[T],
    segments: &[usize],
    num_segments: usize,
) -> Result<Vec<T>> {
    if logits.len() != segments.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logits for {} segment ids",
            logits.len(),
            segments.len()
        )));
    }
    check_segments(segments, num_segments)?;
    let mut max = vec![T::neg_infinity(); num_segments];
    for (&x, &s) in logits.iter().zip(segments) {
        max[s] = max[s].max(x);
    }
    let mut out: Vec<T> = logits
        .iter()
        .zip(segments)
        .map(|(&x, &s)| (x - max[s]).exp())
        .collect();
    let mut denom = vec![T::zero(); num_segments];
    for (&e, &s) in out.iter().zip(segments) {
        denom[s] = denom[s] + e;
    }
    for (e, &s) in out.iter_mut().zip(segments) {
        *e = *e / denom[s];
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Row-wise reduction of `values` into `num_segments` output rows.
///
/// Empty segments produce zero rows for every mode.
pub fn segment_reduce<T: Float>(
    values: &Matrix<T>,
    segments: &[usize],
    num_segments: usize,
    mode: Reduce,
) -> Result<Matrix<T>> {
    if values.rows() != segments.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows for {} segment ids",
            values.rows(),
            segments.len()
        )));
    }
    check_segments(segments, num_segments)?;
    match mode {
        Reduce::Sum => Ok(segment_sum_unchecked(values, segments, num_segments)),
        Reduce::Mean => {
            let mut out = segment_sum_unchecked(values, segments, num_segments);
            let counts = segment_counts(segments, num_segments);
            for (s, &c) in counts.iter().enumerate() {
                if c > 0 {
                    let inv = T::one() / T::from(c).unwrap();
                    out.row_mut(s).iter_mut().for_each(|v| *v = *v * inv);
                }
            }
            Ok(out)
        }
        Reduce::Max => Ok(segment_max_with_arg(values, segments, num_segments).0),
    }
}

pub(crate) fn segment_counts(segments: &[usize], num_segments: usize) -> Vec<usize> {
    let mut counts = vec![0; num_segments];
    for &s in segments {
        counts[s] += 1;
    }
    counts
}

pub(crate) fn segment_sum_unchecked<T: Float>(
    values: &Matrix<T>,
    segments: &[usize],
    num_segments: usize,
) -> Matrix<T> {
    let mut out = Matrix::zeros(num_segments, values.cols());
    for (r, &s) in segments.iter().enumerate() {
        for (o, &v) in out.row_mut(s).iter_mut().zip(values.row(r)) {
            *o = *o + v;
        }
    }
    out
}

/// Segment max plus, for every output entry, the input row that supplied it
/// (`usize::MAX` for empty segments). Ties resolve to the first row.
pub(crate) fn segment_max_with_arg<T: Float>(
    values: &Matrix<T>,
    segments: &[usize],
    num_segments: usize,
) -> (Matrix<T>, Vec<usize>) {
    let cols = values.cols();
    let mut out = Matrix::zeros(num_segments, cols);
    let mut arg = vec![usize::MAX; num_segments * cols];
    for (r, &s) in segments.iter().enumerate() {
        for c in 0..cols {
            let v = values.get(r, c);
            let slot = s * cols + c;
            if arg[slot] == usize::MAX || v > out.data[slot] {
                out.data[slot] = v;
                arg[slot] = r;
            }
        }
    }
    (out, arg)
}
