//! Closed f32 intervals with outward rounding.

use crate::{Error, Result};
use std::sync::atomic::{AtomicBool, Ordering};

/// Sticky flag set whenever an interval endpoint saturates to infinity.
static OVERFLOW: AtomicBool = AtomicBool::new(false);

/// True if any interval operation has saturated since the last
/// [`clear_overflow_flag`].
pub fn overflow_flagged() -> bool {
    OVERFLOW.load(Ordering::Relaxed)
}

/// Reset the sticky overflow flag.
pub fn clear_overflow_flag() {
    OVERFLOW.store(false, Ordering::Relaxed);
}

fn note(x: f32) -> f32 {
    if x.is_infinite() {
        OVERFLOW.store(true, Ordering::Relaxed);
    }
    x
}

/// One ulp toward negative infinity; infinite endpoints stay put.
#[inline]
pub(crate) fn round_down(x: f32) -> f32 {
    if x.is_finite() {
        note(x.next_down())
    } else {
        x
    }
}

/// One ulp toward positive infinity; infinite endpoints stay put.
#[inline]
pub(crate) fn round_up(x: f32) -> f32 {
    if x.is_finite() {
        note(x.next_up())
    } else {
        x
    }
}

/// A closed interval `[lo, hi]` of f32 values.
///
/// Invariant: `lo <= hi` and neither endpoint is NaN. Endpoints may be
/// infinite only as the result of saturation, which sets the overflow flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    lo: f32,
    hi: f32,
}

impl Interval {
    /// Checked constructor; rejects NaN and inverted endpoints.
    pub fn new(lo: f32, hi: f32) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() {
            return Err(Error::NonFinite("Interval::new"));
        }
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "interval endpoints inverted: [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// The degenerate interval `[x, x]`.
    pub fn point(x: f32) -> Self {
        debug_assert!(!x.is_nan());
        Self { lo: x, hi: x }
    }

    /// Internal constructor for values already known to be ordered non-NaN.
    #[inline]
    pub(crate) fn raw(lo: f32, hi: f32) -> Self {
        debug_assert!(!(lo.is_nan() || hi.is_nan()) && lo <= hi, "[{lo}, {hi}]");
        Self { lo: note(lo), hi: note(hi) }
    }

    #[inline]
    pub fn lo(&self) -> f32 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f32 {
        self.hi
    }

    #[inline]
    pub fn width(&self) -> f32 {
        self.hi - self.lo
    }

    /// True if `x` lies inside the closed interval.
    #[inline]
    pub fn contains(&self, x: f32) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// True if `other` is a subset of `self`.
    pub fn encloses(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

/// Sum of two intervals, endpoints stepped one ulp outward.
pub fn interval_add(a: Interval, b: Interval) -> Interval {
    Interval::raw(round_down(a.lo + b.lo), round_up(a.hi + b.hi))
}

/// Interval scaled by a point value; a negative scalar swaps endpoints.
pub fn interval_mul_scalar(a: Interval, c: f32) -> Interval {
    debug_assert!(!c.is_nan());
    if c == 0.0 {
        // Exact: every finite member of `a` maps to zero.
        return Interval::raw(0.0, 0.0);
    }
    if c >= 0.0 {
        Interval::raw(round_down(a.lo * c), round_up(a.hi * c))
    } else {
        Interval::raw(round_down(a.hi * c), round_up(a.lo * c))
    }
}

/// Product of two intervals via the four endpoint products.
pub fn interval_mul(a: Interval, b: Interval) -> Interval {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for p in [a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi] {
        // 0 * inf from a saturated operand: widen to the catch-all.
        if p.is_nan() {
            return Interval::raw(f32::NEG_INFINITY, f32::INFINITY);
        }
        lo = lo.min(p);
        hi = hi.max(p);
    }
    Interval::raw(round_down(lo), round_up(hi))
}

/// ReLU image of an interval. Exact: `max(x, 0)` introduces no rounding.
pub fn interval_relu(a: Interval) -> Interval {
    Interval::raw(a.lo.max(0.0), a.hi.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_and_accessors() {
        let i = Interval::point(1.5);
        assert_eq!(i.lo(), 1.5);
        assert_eq!(i.hi(), 1.5);
        assert!(i.contains(1.5));
    }

    #[test]
    fn new_rejects_nan_and_inverted() {
        assert!(Interval::new(f32::NAN, 0.0).is_err());
        assert!(Interval::new(0.0, f32::NAN).is_err());
        assert!(Interval::new(1.0, 0.0).is_err());
        assert!(Interval::new(-1.0, 1.0).is_ok());
    }

    #[test]
    fn add_widens_outward() {
        let a = Interval::new(0.1, 0.2).unwrap();
        let b = Interval::new(0.3, 0.4).unwrap();
        let s = interval_add(a, b);
        // Endpoints stepped strictly outward relative to the float sums.
        assert!(s.lo() < 0.1f32 + 0.3f32);
        assert!(s.hi() > 0.2f32 + 0.4f32);
        // The exact real sums are covered.
        assert!(f64::from(s.lo()) <= 0.1f64 + 0.3f64 && 0.2f64 + 0.4f64 <= f64::from(s.hi()));
    }

    #[test]
    fn mul_scalar_tiny_band_keeps_positive_width() {
        // A narrow band of small magnitudes scaled by 1000 must stay a
        // genuine enclosure of [1e-5, 2e-5]; naive fixed-point style
        // truncation would collapse it to [0, 0].
        let a = Interval::new(1e-8, 2e-8).unwrap();
        let r = interval_mul_scalar(a, 1000.0);
        assert!(r.lo() > 0.0, "lower endpoint collapsed to zero");
        assert!(r.lo() <= 1e-5 && 2e-5 <= r.hi());
    }

    #[test]
    fn mul_scalar_negative_swaps() {
        let a = Interval::new(-1.0, 2.0).unwrap();
        let r = interval_mul_scalar(a, -3.0);
        assert!(r.lo() <= -6.0 && r.hi() >= 3.0);
        assert!(r.lo() <= r.hi());
    }

    #[test]
    fn mul_scalar_zero_is_exact() {
        let a = Interval::new(-5.0, 7.0).unwrap();
        let r = interval_mul_scalar(a, 0.0);
        assert_eq!((r.lo(), r.hi()), (0.0, 0.0));
    }

    #[test]
    fn relu_is_exact() {
        let r = interval_relu(Interval::new(-1.0, 2.0).unwrap());
        assert_eq!((r.lo(), r.hi()), (0.0, 2.0));
        let r = interval_relu(Interval::new(-3.0, -1.0).unwrap());
        assert_eq!((r.lo(), r.hi()), (0.0, 0.0));
        let r = interval_relu(Interval::new(1.0, 2.0).unwrap());
        assert_eq!((r.lo(), r.hi()), (1.0, 2.0));
    }

    #[test]
    fn overflow_saturates_and_flags() {
        clear_overflow_flag();
        let big = Interval::new(f32::MAX, f32::MAX).unwrap();
        let r = interval_add(big, big);
        assert_eq!(r.hi(), f32::INFINITY);
        assert!(overflow_flagged());
        clear_overflow_flag();
        assert!(!overflow_flagged());
    }

    // Containment oracle: uniformly sampled members of the operand
    // intervals, combined in f64, must land inside the f32 result.
    mod soundness {
        use super::*;
        use proptest::prelude::*;

        fn finite_interval() -> impl Strategy<Value = Interval> {
            (any::<i16>(), any::<i16>(), any::<u16>()).prop_map(|(a, b, w)| {
                let lo = f32::from(a.min(b)) / 7.0;
                let hi = lo + f32::from(w) / 13.0;
                Interval::new(lo, hi).unwrap()
            })
        }

        fn points_in(i: Interval, n: usize) -> Vec<f64> {
            let lo = f64::from(i.lo());
            let hi = f64::from(i.hi());
            (0..n)
                .map(|k| lo + (hi - lo) * (k as f64) / ((n - 1) as f64))
                .collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(512))]

            #[test]
            fn add_contains_sampled_sums(a in finite_interval(), b in finite_interval()) {
                let r = interval_add(a, b);
                for x in points_in(a, 17) {
                    for y in points_in(b, 17) {
                        let s = x + y;
                        prop_assert!(
                            f64::from(r.lo()) <= s && s <= f64::from(r.hi()),
                            "{s} escapes [{}, {}]", r.lo(), r.hi()
                        );
                    }
                }
            }

            #[test]
            fn mul_contains_sampled_products(a in finite_interval(), b in finite_interval()) {
                let r = interval_mul(a, b);
                for x in points_in(a, 17) {
                    for y in points_in(b, 17) {
                        let p = x * y;
                        prop_assert!(
                            f64::from(r.lo()) <= p && p <= f64::from(r.hi()),
                            "{p} escapes [{}, {}]", r.lo(), r.hi()
                        );
                    }
                }
            }

            #[test]
            fn mul_scalar_contains_sampled_products(a in finite_interval(), c in -1e4f32..1e4f32) {
                let r = interval_mul_scalar(a, c);
                for x in points_in(a, 33) {
                    let p = x * f64::from(c);
                    prop_assert!(
                        f64::from(r.lo()) <= p && p <= f64::from(r.hi()),
                        "{p} escapes [{}, {}]", r.lo(), r.hi()
                    );
                }
            }

            #[test]
            fn relu_contains_sampled_images(a in finite_interval()) {
                let r = interval_relu(a);
                for x in points_in(a, 33) {
                    let v = x.max(0.0);
                    prop_assert!(f64::from(r.lo()) <= v && v <= f64::from(r.hi()));
                }
            }
        }
    }
}
