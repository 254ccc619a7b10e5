//! Closed real intervals and the arithmetic used by interval networks.
//!
//! Endpoints are plain `f64` with round-to-nearest; no outward rounding is
//! performed. Constructors reject `lo > hi` and NaN endpoints, and map `-0.0`
//! to `0.0` so that endpoint comparisons are deterministic.

use std::fmt;
use std::ops::{Add, Index, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
fn norm_zero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

/// A closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self {
            lo: norm_zero(lo),
            hi: norm_zero(hi),
        })
    }

    /// Degenerate interval `[x, x]`.
    pub fn point(x: f64) -> Self {
        Self {
            lo: norm_zero(x),
            hi: norm_zero(x),
        }
    }

    /// `[center - radius, center + radius]`; `radius` must be non-negative.
    pub fn from_center_radius(center: f64, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative interval radius {radius}"
            )));
        }
        Self::new(center - radius, center + radius)
    }

    /// Interval hull of two possibly unordered values.
    pub fn hull(a: f64, b: f64) -> Self {
        Self {
            lo: norm_zero(a.min(b)),
            hi: norm_zero(a.max(b)),
        }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn radius(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    #[inline]
    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Length of `self ∩ other`, zero when disjoint.
    #[inline]
    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.hi.min(other.hi) - self.lo.max(other.lo)).max(0.0)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl TryFrom<(f64, f64)> for Interval {
    type Error = Error;

    fn try_from((lo, hi): (f64, f64)) -> Result<Self> {
        Interval::new(lo, hi)
    }
}

impl From<Interval> for (f64, f64) {
    fn from(iv: Interval) -> Self {
        (iv.lo, iv.hi)
    }
}

/// Interval addition `[a.lo + b.lo, a.hi + b.hi]`.
#[inline]
pub fn iadd(a: Interval, b: Interval) -> Interval {
    Interval::hull(a.lo + b.lo, a.hi + b.hi)
}

/// Interval subtraction `[a.lo - b.hi, a.hi - b.lo]`.
#[inline]
pub fn isub(a: Interval, b: Interval) -> Interval {
    Interval::hull(a.lo - b.hi, a.hi - b.lo)
}

/// Interval multiplication by enumeration of the four endpoint products.
#[inline]
pub fn imul(a: Interval, b: Interval) -> Interval {
    let p = [a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi];
    let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Interval::hull(lo, hi)
}

/// Interval product `[wl, wu] ⊙ [zl, zu]` written as a composition of
/// `min`/`max` with zero, sums and products only.
///
/// Every sub-expression is continuous in the endpoints, which is what makes
/// the interval dense layer trainable by backpropagation. The result equals
/// [`imul`] exactly; the tape version in `inn` mirrors this function term by
/// term.
#[inline]
pub fn smooth_imul(wl: f64, wu: f64, zl: f64, zu: f64) -> (f64, f64) {
    let (wl_n, wl_p) = (wl.min(0.0), wl.max(0.0));
    let (wu_n, wu_p) = (wu.min(0.0), wu.max(0.0));
    let (zl_n, zl_p) = (zl.min(0.0), zl.max(0.0));
    let (zu_n, zu_p) = (zu.min(0.0), zu.max(0.0));

    let cl = wu_n * zu_n + wl_p * zl_p + (wu_p * zl_n - wl_n * zu_p).min(0.0) + wl_n * zu_p;
    let cu = wu_n * zl_p + wl_p * zu_n + (wl_n * zl_n - wu_p * zu_p).max(0.0) + wu_p * zu_p;
    (norm_zero(cl), norm_zero(cu))
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        iadd(self, rhs)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        isub(self, rhs)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        imul(self, rhs)
    }
}

/// A vector of independent intervals, e.g. one interval per input variable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalVector(Vec<Interval>);

impl IntervalVector {
    pub fn new(items: Vec<Interval>) -> Self {
        Self(items)
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::ShapeMismatch {
                op: "IntervalVector::from_bounds",
                lhs: vec![lo.len()],
                rhs: vec![hi.len()],
            });
        }
        lo.iter()
            .zip(hi)
            .map(|(&l, &h)| Interval::new(l, h))
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn points(values: &[f64]) -> Self {
        Self(values.iter().map(|&v| Interval::point(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Interval> {
        self.0.iter()
    }

    pub fn lows(&self) -> Vec<f64> {
        self.0.iter().map(Interval::lo).collect()
    }

    pub fn highs(&self) -> Vec<f64> {
        self.0.iter().map(Interval::hi).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.0.iter().map(Interval::midpoint).collect()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.0.iter().map(Interval::radius).collect()
    }

    pub fn as_slice(&self) -> &[Interval] {
        &self.0
    }
}

impl Index<usize> for IntervalVector {
    type Output = Interval;
    fn index(&self, i: usize) -> &Interval {
        &self.0[i]
    }
}

impl FromIterator<Interval> for IntervalVector {
    fn from_iter<T: IntoIterator<Item = Interval>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a IntervalVector {
    type Item = &'a Interval;
    type IntoIter = std::slice::Iter<'a, Interval>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
