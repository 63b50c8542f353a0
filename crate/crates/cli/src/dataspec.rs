//! Dataset specification strings.
//!
//! Every subcommand names its data with one compact string, so manifests
//! can reproduce the exact dataset without copying it:
//!
//! * `csv:PATH`            — load a CSV with header `x0,x1,...,label`.
//! * `idx:IMAGES:LABELS`   — load a big-endian IDX image/label pair.
//! * `moons:N:NOISE:SEED`  — two interleaved half-circles in [0,1]².
//! * `blobs:N:K:SPREAD:SEED` — `K` Gaussian-ish clusters in [0,1]².
//! * `digits:N:NOISE:SEED` — synthetic 28×28 ten-class digit corpus.
//!
//! Synthetic datasets are fully determined by the string, so a manifest
//! rerun regenerates them bit-identically; file-backed kinds record the
//! path. Paths containing `:` are not representable.

use std::path::Path;
use std::str::FromStr;

use vrnn_core::data_io::{self, Dataset};
use vrnn_core::fixtures;

use crate::{usage, CliError};

/// Parse and materialize a dataset specification.
pub fn resolve(spec: &str) -> Result<Dataset, CliError> {
    let bad = |why: &str| usage(format!("bad dataset spec '{spec}': {why}"));
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| bad("expected 'kind:...', e.g. moons:200:0.05:7"))?;
    match kind {
        "csv" => Ok(data_io::load_csv(Path::new(rest))?),
        "idx" => {
            let (img, lbl) = rest
                .split_once(':')
                .ok_or_else(|| bad("idx needs two paths: idx:IMAGES:LABELS"))?;
            Ok(data_io::load_idx(Path::new(img), Path::new(lbl))?)
        }
        "moons" => {
            let p = split_exact(spec, rest, 3)?;
            Ok(data_io::synth_moons(num(spec, p[0])?, num(spec, p[1])?, num(spec, p[2])?)?)
        }
        "blobs" => {
            let p = split_exact(spec, rest, 4)?;
            Ok(data_io::synth_blobs(
                num(spec, p[0])?,
                num(spec, p[1])?,
                num(spec, p[2])?,
                num(spec, p[3])?,
            )?)
        }
        "digits" => {
            let p = split_exact(spec, rest, 3)?;
            Ok(fixtures::digit_dataset(num(spec, p[0])?, num(spec, p[1])?, num(spec, p[2])?))
        }
        other => Err(bad(&format!(
            "unknown kind '{other}' (expected csv, idx, moons, blobs, or digits)"
        ))),
    }
}

/// Split `rest` into exactly `n` colon-separated fields.
fn split_exact<'a>(spec: &str, rest: &'a str, n: usize) -> Result<Vec<&'a str>, CliError> {
    let parts: Vec<&str> = rest.split(':').collect();
    if parts.len() != n {
        return Err(usage(format!(
            "bad dataset spec '{spec}': expected {n} fields after the kind, got {}",
            parts.len()
        )));
    }
    Ok(parts)
}

/// Parse one numeric field.
fn num<T: FromStr>(spec: &str, field: &str) -> Result<T, CliError> {
    field.parse().map_err(|_| {
        usage(format!(
            "bad dataset spec '{spec}': '{field}' is not a valid {}",
            std::any::type_name::<T>()
        ))
    })
}
