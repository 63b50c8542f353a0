//! Dense f32 vectors and row-major matrices.

use super::interval::{round_down, round_up, Interval};
use crate::{Error, Result};

/// Relative error bound for a compensated f64 summation of `terms` values.
///
/// Each f32*f32 product is exact in f64, so only the additions round. The
/// classic bound is `(n-1) * eps * sum(|terms|)`; the extra slack covers the
/// final conversion chain.
#[inline]
pub(crate) fn sum_err(terms: usize, abs_sum: f64) -> f64 {
    (terms as f64 + 2.0) * f64::EPSILON * abs_sum
}

/// A finite f32 vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Vec32(Vec<f32>);

impl Vec32 {
    /// Checked constructor; every entry must be finite.
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Vec32::new"));
        }
        Ok(Self(data))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

impl std::ops::Index<usize> for Vec32 {
    type Output = f32;
    #[inline]
    fn index(&self, i: usize) -> &f32 {
        &self.0[i]
    }
}

/// A finite f32 matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat32 {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Mat32 {
    /// Checked constructor; `data.len()` must equal `rows * cols` and every
    /// entry must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "Mat32::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Mat32::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
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
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access for optimizer updates; the caller must keep entries
    /// finite (training aborts on divergence before NaN reaches storage).
    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// `m * v` with 64-bit accumulation, rounded to nearest f32.
pub fn matvec(m: &Mat32, v: &[f32]) -> Result<Vec<f32>> {
    if m.cols != v.len() {
        return Err(Error::DimMismatch {
            context: "matvec",
            expected: m.cols,
            got: v.len(),
        });
    }
    let mut out = Vec::with_capacity(m.rows);
    for i in 0..m.rows {
        let mut acc = 0.0f64;
        for (w, x) in m.row(i).iter().zip(v) {
            acc += f64::from(*w) * f64::from(*x);
        }
        out.push(acc as f32);
    }
    Ok(out)
}

/// `m * v` over an interval vector: a sound enclosure of all products
/// `m * x` for concrete `x` inside `v`.
///
/// Each row accumulates both endpoints in f64 (the sign of the weight picks
/// which operand endpoint feeds which accumulator), widens by the summation
/// error bound, and converts outward to f32.
pub fn matvec_interval(m: &Mat32, v: &[Interval]) -> Result<Vec<Interval>> {
    if m.cols != v.len() {
        return Err(Error::DimMismatch {
            context: "matvec_interval",
            expected: m.cols,
            got: v.len(),
        });
    }
    let mut out = Vec::with_capacity(m.rows);
    for i in 0..m.rows {
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        let mut abs = 0.0f64;
        for (w, x) in m.row(i).iter().zip(v) {
            let w = f64::from(*w);
            let (a, b) = if w >= 0.0 {
                (w * f64::from(x.lo()), w * f64::from(x.hi()))
            } else {
                (w * f64::from(x.hi()), w * f64::from(x.lo()))
            };
            lo += a;
            hi += b;
            abs += a.abs().max(b.abs());
        }
        let err = sum_err(m.cols, abs);
        out.push(Interval::raw(
            round_down((lo - err) as f32),
            round_up((hi + err) as f32),
        ));
    }
    Ok(out)
}
