//! Closed real intervals and axis-aligned boxes.
//!
//! Arithmetic uses the host's round-to-nearest mode without outward
//! rounding. Every operation is monotone in its endpoints, so an interval
//! evaluation that follows the same operation order as a point evaluation
//! encloses the floating-point result of that point evaluation.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Builds `[lo, hi]`. Panics in debug builds when `lo > hi`.
    #[inline]
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    #[inline]
    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        let m = self.lo + 0.5 * (self.hi - self.lo);
        m.clamp(self.lo, self.hi)
    }

    #[inline]
    pub fn rad(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// Largest absolute value attained on the interval.
    #[inline]
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    #[inline]
    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    #[inline]
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    /// Intersection, or `None` when disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then(|| Interval::new(lo, hi))
    }

    #[inline]
    pub fn scale(&self, k: f64) -> Interval {
        if k >= 0.0 {
            Interval::new(k * self.lo, k * self.hi)
        } else {
            Interval::new(k * self.hi, k * self.lo)
        }
    }

    /// Grows both ends by `r >= 0`.
    #[inline]
    pub fn inflate(&self, r: f64) -> Interval {
        Interval::new(self.lo - r, self.hi + r)
    }

    /// Exact square: `[0, max]` when the interval straddles zero.
    pub fn sqr(&self) -> Interval {
        let a = self.lo * self.lo;
        let b = self.hi * self.hi;
        if self.lo <= 0.0 && self.hi >= 0.0 {
            Interval::new(0.0, a.max(b))
        } else {
            Interval::new(a.min(b), a.max(b))
        }
    }

    #[inline]
    pub fn relu(&self) -> Interval {
        Interval::new(self.lo.max(0.0), self.hi.max(0.0))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Add for Interval {
    type Output = Interval;
    #[inline]
    fn add(self, rhs: Interval) -> Interval {
        Interval::new(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Add<f64> for Interval {
    type Output = Interval;
    #[inline]
    fn add(self, rhs: f64) -> Interval {
        Interval::new(self.lo + rhs, self.hi + rhs)
    }
}

impl Sub for Interval {
    type Output = Interval;
    #[inline]
    fn sub(self, rhs: Interval) -> Interval {
        Interval::new(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Sub<f64> for Interval {
    type Output = Interval;
    #[inline]
    fn sub(self, rhs: f64) -> Interval {
        Interval::new(self.lo - rhs, self.hi - rhs)
    }
}

impl Neg for Interval {
    type Output = Interval;
    #[inline]
    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let p = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }
}

impl Mul<Interval> for f64 {
    type Output = Interval;
    #[inline]
    fn mul(self, rhs: Interval) -> Interval {
        rhs.scale(self)
    }
}

/// An axis-aligned box, one [`Interval`] per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox(Vec<Interval>);

impl IntervalBox {
    /// Builds a box from bound vectors, rejecting `lower > upper` and non-finite bounds.
    pub fn new(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::shape("box bounds", lower.len(), upper.len()));
        }
        lower
            .iter()
            .zip(upper)
            .enumerate()
            .map(|(i, (&lo, &hi))| {
                if !lo.is_finite() || !hi.is_finite() {
                    Err(Error::InvalidBox(format!("component {i} has a non-finite bound")))
                } else if lo > hi {
                    Err(Error::InvalidBox(format!("component {i}: lower {lo} > upper {hi}")))
                } else {
                    Ok(Interval::new(lo, hi))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(IntervalBox)
    }

    pub fn from_intervals(intervals: Vec<Interval>) -> Self {
        IntervalBox(intervals)
    }

    /// Degenerate box `{x}`.
    pub fn point(x: &[f64]) -> Self {
        IntervalBox(x.iter().map(|&v| Interval::point(v)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn into_intervals(self) -> Vec<Interval> {
        self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> Interval {
        self.0[i]
    }

    pub fn lower(&self) -> Vec<f64> {
        self.0.iter().map(|iv| iv.lo).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.0.iter().map(|iv| iv.hi).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.0.iter().map(Interval::mid).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.0.iter().map(Interval::width).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.0.iter().map(Interval::width).fold(0.0, f64::max)
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.0.iter().zip(x).all(|(iv, &v)| iv.contains(v))
    }

    pub fn is_subset_of(&self, other: &IntervalBox) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a.is_subset_of(b))
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &IntervalBox) -> IntervalBox {
        debug_assert_eq!(self.dim(), other.dim());
        IntervalBox(self.0.iter().zip(&other.0).map(|(a, b)| a.hull(b)).collect())
    }

    pub fn intersect(&self, other: &IntervalBox) -> Option<IntervalBox> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.intersect(b))
            .collect::<Option<Vec<_>>>()
            .map(IntervalBox)
    }

    /// Minkowski sum with the infinity-norm ball of radius `r`.
    pub fn inflate(&self, r: f64) -> IntervalBox {
        IntervalBox(self.0.iter().map(|iv| iv.inflate(r)).collect())
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &IntervalBox) -> IntervalBox {
        IntervalBox(self.0.iter().chain(&other.0).copied().collect())
    }

    /// Componentwise distance by which `x` lies outside the box (0 inside).
    pub fn excess(&self, x: &[f64]) -> Vec<f64> {
        self.0
            .iter()
            .zip(x)
            .map(|(iv, &v)| (iv.lo - v).max(v - iv.hi).max(0.0))
            .collect()
    }
}

impl fmt::Display for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, iv) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " x ")?;
            }
            write!(f, "{iv}")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Serialize for IntervalBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BoxRepr {
            lower: self.lower(),
            upper: self.upper(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntervalBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = BoxRepr::deserialize(d)?;
        IntervalBox::new(&repr.lower, &repr.upper).map_err(serde::de::Error::custom)
    }
}
