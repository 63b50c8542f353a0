//! Training, attack, and certification toolkit for small fully-connected
//! ReLU classifiers.
//!
//! The crate is organised around one pipeline:
//!
//! * [`numerics`] supplies outward-rounded interval arithmetic and the
//!   deterministic random number generator every other module draws from.
//! * [`model`] holds the network representation, plain forward/backward
//!   passes, and the on-disk weight format.
//! * [`analysis`] propagates symbolic linear bounds through a network and
//!   derives worst-case logits, the verifiable robust loss, and its input
//!   gradient.
//! * [`attack`] implements gradient attacks (FGSM, PGD) and the
//!   bound-guided interval attack.
//! * [`train`] implements regular, adversarial, fully verifiable, and mixed
//!   training loops.
//! * [`verify`] decides per-input robustness by bisection and reports
//!   dataset-level accuracy metrics.
//! * [`data_io`] loads IDX image files, generates synthetic datasets, and
//!   handles feature normalization.
//!
//! Soundness contract: every interval or symbolic bound computed by
//! [`numerics`] and [`analysis`] contains the exact real-arithmetic value;
//! rounding always widens, never narrows.

pub mod analysis;
pub mod attack;
pub mod data_io;
pub mod fixtures;
pub mod model;
pub mod numerics;
pub mod train;
pub mod verify;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A constructor was handed a NaN or infinite value.
    #[error("non-finite value rejected in {0}")]
    NonFinite(&'static str),
    /// A configuration value is out of its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A serialized model or dataset failed structural validation.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
