//! Dataset ingestion and normalization: IDX image files, synthetic 2-D
//! generators, and CSV import/export.
//!
//! Raw feature scale is always `[0, 1]` (pixels divided by 255, synthetic
//! points clamped). Normalization maps that scale by `x' = (x - mu) / sigma`
//! per feature and records the mapping, so perturbation budgets stated in
//! the raw scale can be converted to internal radii with [`Normalization::radius`].

use crate::model::Sample;
use crate::numerics::{Rng, Vec32};
use crate::{Error, Result};
use std::io::Read;
use std::path::Path;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Per-feature affine mapping from the raw `[0, 1]` scale to model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    mu: Vec<f32>,
    sigma: Vec<f32>,
}

impl Normalization {
    /// Identity mapping for `d` features.
    pub fn identity(d: usize) -> Self {
        Self { mu: vec![0.0; d], sigma: vec![1.0; d] }
    }

    /// Same mean and deviation for every feature.
    pub fn scalar(d: usize, mu: f32, sigma: f32) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { mu: vec![mu; d], sigma: vec![sigma; d] })
    }

    pub fn per_feature(mu: Vec<f32>, sigma: Vec<f32>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::DimMismatch {
                context: "Normalization::per_feature",
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        if sigma.iter().any(|s| *s <= 0.0 || !s.is_finite())
            || mu.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidConfig("sigma must be positive and finite".into()));
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Post-normalization domain: the image of `[0, 1]` per feature.
    pub fn domain(&self) -> (Vec<f32>, Vec<f32>) {
        let lo = self.apply(&vec![0.0; self.dim()]);
        let hi = self.apply(&vec![1.0; self.dim()]);
        (lo, hi)
    }

    /// Internal per-feature radius for a raw-scale budget `eps`.
    pub fn radius(&self, eps: f32) -> Vec<f32> {
        self.sigma.iter().map(|s| eps / s).collect()
    }
}

/// An immutable labelled dataset plus its normalization record.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub norm: Normalization,
    /// Human-readable origin tag, e.g. `idx:train-images` or `moons:200`.
    pub provenance: String,
}

impl Dataset {
    /// Feature dimension of the samples.
    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn class_count(&self) -> usize {
        self.samples.iter().map(|s| s.y).max().map_or(0, |m| m + 1)
    }
}

fn read_u32_be(data: &[u8], pos: usize, path: &Path) -> Result<u32> {
    if pos + 4 > data.len() {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("truncated: needed 4 bytes at offset {pos}"),
        });
    }
    Ok(u32::from_be_bytes(data[pos..pos + 4].try_into().unwrap()))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    Ok(data)
}

/// Load an IDX image/label file pair (the classic big-endian MNIST layout).
///
/// Images: u32 magic `0x00000803`, u32 count, u32 rows, u32 cols, then
/// `count * rows * cols` pixel bytes. Labels: u32 magic `0x00000801`,
/// u32 count, then `count` label bytes. Pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let lbl = read_file(labels_path)?;
    let fail = |path: &Path, reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };

    let magic = read_u32_be(&img, 0, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(fail(images_path, format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32_be(&img, 4, images_path)? as usize;
    let rows = read_u32_be(&img, 8, images_path)? as usize;
    let cols = read_u32_be(&img, 12, images_path)? as usize;
    let pixels = rows * cols;
    if img.len() != 16 + count * pixels {
        return Err(fail(
            images_path,
            format!("expected {} pixel bytes, found {}", count * pixels, img.len() - 16),
        ));
    }

    let lmagic = read_u32_be(&lbl, 0, labels_path)?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(fail(labels_path, format!("bad label magic {lmagic:#010x}")));
    }
    let lcount = read_u32_be(&lbl, 4, labels_path)? as usize;
    if lcount != count {
        return Err(fail(
            labels_path,
            format!("label count {lcount} does not match image count {count}"),
        ));
    }
    if lbl.len() != 8 + lcount {
        return Err(fail(
            labels_path,
            format!("expected {lcount} label bytes, found {}", lbl.len() - 8),
        ));
    }

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * pixels;
        let x: Vec<f32> = img[start..start + pixels]
            .iter()
            .map(|p| f32::from(*p) / 255.0)
            .collect();
        samples.push(Sample {
            x: Vec32::new(x)?,
            y: usize::from(lbl[8 + i]),
        });
    }
    Ok(Dataset {
        samples,
        norm: Normalization::identity(pixels),
        provenance: format!("idx:{}", images_path.display()),
    })
}

/// Write an IDX image/label pair from raw bytes. Inverse of [`load_idx`]
/// up to the `[0, 1]` pixel scaling.
pub fn write_idx(
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
    labels: &[u8],
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    if images.len() != labels.len() {
        return Err(Error::DimMismatch {
            context: "write_idx",
            expected: images.len(),
            got: labels.len(),
        });
    }
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        if im.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "write_idx image size",
                expected: rows * cols,
                got: im.len(),
            });
        }
        img.extend_from_slice(im);
    }
    let mut lbl = Vec::with_capacity(8 + labels.len());
    lbl.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lbl)?;
    Ok(())
}

// Raw-scale moon curves before mapping into [0, 1]^2:
// moon 0 traces (cos t, sin t) and moon 1 traces (1 - cos t, 0.5 - sin t)
// for t in [0, pi]. The joint bounding box is [-1, 2] x [-0.5, 1].
fn moons_map(x: f32, y: f32) -> (f32, f32) {
    ((x + 1.0) / 3.0, (y + 0.5) / 1.5)
}

/// Invert the `[0, 1]^2` mapping back to the raw moon coordinate frame.
pub fn moons_unmap(x: f32, y: f32) -> (f32, f32) {
    (x * 3.0 - 1.0, y * 1.5 - 0.5)
}

/// Two interleaved half-circles in `[0, 1]^2`, `n/2` points each (labels 0
/// and 1), with isotropic Gaussian jitter of deviation `noise` in the raw
/// coordinate frame.
pub fn synth_moons(n: usize, noise: f32, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need n >= 2, got {n}")));
    }
    let mut rng = Rng::seed(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t = rng.uniform(0.0, std::f32::consts::PI);
        let (rx, ry) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let (rx, ry) = (rx + noise * rng.gauss(), ry + noise * rng.gauss());
        let (x, y) = moons_map(rx, ry);
        samples.push(Sample {
            x: Vec32::new(vec![x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)])?,
            y: label,
        });
    }
    Ok(Dataset {
        samples,
        norm: Normalization::identity(2),
        provenance: format!("moons:{n}:{noise}:{seed}"),
    })
}

/// `k` Gaussian blobs in `[0, 1]^2`, centers evenly spaced on a circle of
/// radius 0.3 around (0.5, 0.5); label = blob index, assigned round-robin.
pub fn synth_blobs(n: usize, k: usize, spread: f32, seed: u64) -> Result<Dataset> {
    if n < 2 || k < 2 {
        return Err(Error::InvalidConfig(format!("need n >= 2 and k >= 2, got n={n} k={k}")));
    }
    let mut rng = Rng::seed(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % k;
        let angle = std::f32::consts::TAU * label as f32 / k as f32;
        let cx = 0.5 + 0.3 * angle.cos();
        let cy = 0.5 + 0.3 * angle.sin();
        let x = (cx + spread * rng.gauss()).clamp(0.0, 1.0);
        let y = (cy + spread * rng.gauss()).clamp(0.0, 1.0);
        samples.push(Sample { x: Vec32::new(vec![x, y])?, y: label });
    }
    Ok(Dataset {
        samples,
        norm: Normalization::identity(2),
        provenance: format!("blobs:{n}:{k}:{spread}:{seed}"),
    })
}

/// Re-standardize a dataset: `x' = (x - mu) / sigma` per feature, with the
/// normalization record composed so raw-scale budgets stay convertible.
/// `mu` and `sigma` may hold one value (broadcast) or one per feature.
pub fn normalize(ds: &Dataset, mu: &[f32], sigma: &[f32]) -> Result<Dataset> {
    let d = ds.dim();
    let expand = |v: &[f32], what: &'static str| -> Result<Vec<f32>> {
        match v.len() {
            1 => Ok(vec![v[0]; d]),
            n if n == d => Ok(v.to_vec()),
            n => Err(Error::DimMismatch { context: what, expected: d, got: n }),
        }
    };
    let mu = expand(mu, "normalize mu")?;
    let sigma = expand(sigma, "normalize sigma")?;
    let step = Normalization::per_feature(mu.clone(), sigma.clone())?;

    let samples = ds
        .samples
        .iter()
        .map(|s| {
            Ok(Sample {
                x: Vec32::new(step.apply(s.x.as_slice()))?,
                y: s.y,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Compose with the existing record: if x_cur = (x_raw - m0)/s0 and
    // x_new = (x_cur - m1)/s1, then x_new = (x_raw - (m0 + m1*s0))/(s0*s1).
    let m0 = &ds.norm.mu;
    let s0 = &ds.norm.sigma;
    let total = Normalization::per_feature(
        m0.iter()
            .zip(s0.iter().zip(&mu))
            .map(|(m0, (s0, m1))| m0 + m1 * s0)
            .collect(),
        s0.iter().zip(&sigma).map(|(s0, s1)| s0 * s1).collect(),
    )?;
    Ok(Dataset {
        samples,
        norm: total,
        provenance: ds.provenance.clone(),
    })
}

/// Export to CSV with header `x0,x1,...,label`.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    use std::io::Write as _;
    let mut out = String::new();
    for j in 0..ds.dim() {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("label\n");
    for s in &ds.samples {
        for v in s.x.as_slice() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", s.y));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Import a CSV written by [`write_csv`].
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let fail = |reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.last() != Some(&"label") || cols.len() < 2 {
        return Err(fail("header must be x0,...,label".into()));
    }
    let d = cols.len() - 1;
    let mut samples = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(fail(format!("line {}: expected {} fields", ln + 2, d + 1)));
        }
        let x: Vec<f32> = fields[..d]
            .iter()
            .map(|f| f.parse::<f32>().map_err(|e| fail(format!("line {}: {e}", ln + 2))))
            .collect::<Result<_>>()?;
        let y: usize = fields[d]
            .parse()
            .map_err(|e| fail(format!("line {}: {e}", ln + 2)))?;
        samples.push(Sample { x: Vec32::new(x)?, y });
    }
    Ok(Dataset {
        samples,
        norm: Normalization::identity(d),
        provenance: format!("csv:{}", path.display()),
    })
}
