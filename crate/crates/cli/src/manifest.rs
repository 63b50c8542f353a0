//! Run manifests: ordered plain-text `key=value` records.
//!
//! Every run writes exactly one manifest holding its fully resolved
//! configuration (flags with defaults filled in), the tool version,
//! start/end timestamps, and the run's headline results. The `rerun`
//! subcommand turns the flag-bearing keys back into a command line, so
//! a manifest is a complete, replayable record of the run.
//!
//! Format: one `key=value` pair per line, written in insertion order.
//! Keys never contain `=`; values may (summaries such as `ACC=…` do).
//! Blank lines are ignored when parsing; anything else without `=` is a
//! parse error.

use std::fmt::Display;
use std::path::Path;

/// An ordered list of `key=value` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pairs: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append one pair. Keys and values must be newline-free and the key
    /// must not contain `=`; all writers in this crate satisfy that.
    pub fn push(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        debug_assert!(!key.contains('=') && !key.contains('\n'), "bad manifest key {key:?}");
        debug_assert!(!value.contains('\n'), "manifest value for {key:?} contains a newline");
        self.pairs.push((key.to_string(), value));
    }

    /// First value stored under `key`, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Parse manifest text. Returns a human-readable description of the
    /// first malformed line on failure.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = Manifest::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", idx + 1))?;
            m.push(k, v);
        }
        Ok(m)
    }

    pub fn store(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.render())
    }
}

/// Seconds since the Unix epoch, for the start/end stamps.
pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
