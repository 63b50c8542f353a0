//! Deterministic numeric kernels: dense f32 linear algebra, outward-rounded
//! interval arithmetic, and a seedable random number generator.
//!
//! # Rounding discipline
//!
//! Interval results are always rounded *outward*: lower endpoints move toward
//! negative infinity, upper endpoints toward positive infinity. Elementwise
//! operations step each endpoint one unit in the last place after the float
//! computation. Dot products accumulate in 64-bit, widen by an explicit
//! summation error bound, and only then convert back to f32 with an outward
//! step. An operation that saturates to an infinite endpoint raises a sticky
//! process-wide flag readable through [`overflow_flagged`].

mod interval;
mod linalg;
mod rng;

pub use interval::{
    clear_overflow_flag, interval_add, interval_mul, interval_mul_scalar, interval_relu,
    overflow_flagged, Interval,
};
pub use linalg::{matvec, matvec_interval, Mat32, Vec32};
pub use rng::{derive_seed, Rng};
