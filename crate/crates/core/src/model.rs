//! Fully-connected ReLU classifier: representation, forward pass,
//! reverse-mode gradients, cross-entropy loss, and persistence.
//!
//! # Weight file format
//!
//! Little-endian throughout: magic `VRNN`, u32 version (currently 1),
//! u32 layer count, then per layer u32 rows, u32 cols, `rows * cols` f32
//! weights in row-major order, and `rows` f32 biases. Rows index output
//! neurons, so `rows` equals the bias length.

use crate::numerics::{matvec, Mat32, Rng, Vec32};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MODEL_MAGIC: [u8; 4] = *b"VRNN";
pub const MODEL_VERSION: u32 = 1;

/// One affine layer; rows of `w` are output neurons.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Mat32,
    pub b: Vec32,
}

/// A fully-connected classifier with ReLU on hidden layers and identity on
/// the output layer.
///
/// Invariants: consecutive layer shapes chain, every bias length matches its
/// weight row count, and the output layer has at least two logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// A labelled input; `x` is expected in the dataset's normalized scale.
#[derive(Clone, Debug)]
pub struct Sample {
    pub x: Vec32,
    pub y: usize,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].w.rows() != pair[1].w.cols() {
                return Err(Error::DimMismatch {
                    context: "Network::new layer chain",
                    expected: pair[0].w.rows(),
                    got: pair[1].w.cols(),
                });
            }
        }
        for layer in &layers {
            if layer.b.len() != layer.w.rows() {
                return Err(Error::DimMismatch {
                    context: "Network::new bias length",
                    expected: layer.w.rows(),
                    got: layer.b.len(),
                });
            }
        }
        if layers.last().unwrap().w.rows() < 2 {
            return Err(Error::InvalidConfig("output layer needs k >= 2 logits".into()));
        }
        Ok(Self { layers })
    }

    /// Kaiming-uniform initialization: each weight drawn from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero.
    ///
    /// `dims` lists layer widths input-first, e.g. `[784, 64, 64, 10]`.
    pub fn kaiming(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig("need at least input and output dims".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f32).sqrt();
            let data: Vec<f32> = (0..fan_in * fan_out)
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            layers.push(Layer {
                w: Mat32::new(fan_out, fan_in, data)?,
                b: Vec32::zeros(fan_out),
            });
        }
        Self::new(layers)
    }

    #[inline]
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }

    /// Input dimension d.
    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    /// Number of classes k.
    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }
}

/// Cached forward-pass state for one input: the input itself plus every
/// pre-activation vector. Consumed by value in [`backward`], so a tape can
/// never be replayed against a second backward pass.
#[derive(Debug)]
pub struct GradientTape {
    x: Vec<f32>,
    pre: Vec<Vec<f32>>,
}

/// Per-layer weight and bias gradients plus the input gradient.
#[derive(Clone, Debug)]
pub struct Grads {
    pub w: Vec<Mat32>,
    pub b: Vec<Vec<f32>>,
    pub x: Vec<f32>,
}

fn affine(layer: &Layer, x: &[f32]) -> Result<Vec<f32>> {
    let mut z = matvec(&layer.w, x)?;
    for (zi, bi) in z.iter_mut().zip(layer.b.as_slice()) {
        *zi += bi;
    }
    Ok(z)
}

/// Logits for one input.
pub fn forward(net: &Network, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != net.input_dim() {
        return Err(Error::DimMismatch {
            context: "forward",
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    let last = net.layers.len() - 1;
    let mut a = x.to_vec();
    for (l, layer) in net.layers.iter().enumerate() {
        let mut z = affine(layer, &a)?;
        if l < last {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        a = z;
    }
    Ok(a)
}

/// Predicted class: position of the largest logit (lowest index wins ties).
pub fn predict(net: &Network, x: &[f32]) -> Result<usize> {
    Ok(argmax(&forward(net, x)?))
}

/// Index of the maximum; first occurrence wins ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Forward pass that also records the state [`backward`] needs.
pub fn forward_with_tape(net: &Network, x: &[f32]) -> Result<(Vec<f32>, GradientTape)> {
    if x.len() != net.input_dim() {
        return Err(Error::DimMismatch {
            context: "forward_with_tape",
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    let last = net.layers.len() - 1;
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut a = x.to_vec();
    for (l, layer) in net.layers.iter().enumerate() {
        let z = affine(layer, &a)?;
        pre.push(z.clone());
        a = if l < last {
            z.into_iter().map(|v| v.max(0.0)).collect()
        } else {
            z
        };
    }
    let logits = a;
    Ok((logits, GradientTape { x: x.to_vec(), pre }))
}

/// Reverse-mode gradients for one input.
///
/// `d_logits` is the loss derivative at the output layer (for cross-entropy,
/// `softmax(logits) - onehot(y)`). The tape is consumed, which is what makes
/// "at most one backward per forward" a compile-time guarantee. ReLU uses
/// the zero subgradient at exactly zero pre-activation.
pub fn backward(net: &Network, tape: GradientTape, d_logits: &[f32]) -> Result<Grads> {
    let n_layers = net.layers.len();
    if d_logits.len() != net.output_dim() {
        return Err(Error::DimMismatch {
            context: "backward",
            expected: net.output_dim(),
            got: d_logits.len(),
        });
    }
    // Activations entering each layer: input for layer 0, relu(pre) after.
    let mut acts: Vec<&[f32]> = Vec::with_capacity(n_layers);
    acts.push(&tape.x);
    let relu_acts: Vec<Vec<f32>> = tape.pre[..n_layers - 1]
        .iter()
        .map(|z| z.iter().map(|v| v.max(0.0)).collect())
        .collect();
    for a in &relu_acts {
        acts.push(a);
    }

    let mut w_grads = vec![Mat32::zeros(0, 0); n_layers];
    let mut b_grads = vec![Vec::new(); n_layers];
    let mut delta = d_logits.to_vec();
    for l in (0..n_layers).rev() {
        let layer = &net.layers[l];
        let a_in = acts[l];
        let mut dw = vec![0.0f32; layer.w.rows() * layer.w.cols()];
        for (i, di) in delta.iter().enumerate() {
            let row = &mut dw[i * layer.w.cols()..(i + 1) * layer.w.cols()];
            for (slot, aj) in row.iter_mut().zip(a_in) {
                *slot = di * aj;
            }
        }
        w_grads[l] = Mat32::new(layer.w.rows(), layer.w.cols(), dw)?;
        b_grads[l] = delta.clone();

        // delta for the previous layer: W^T delta, gated by relu'(pre).
        let mut prev = vec![0.0f32; layer.w.cols()];
        for (i, di) in delta.iter().enumerate() {
            for (j, pj) in prev.iter_mut().enumerate() {
                *pj += layer.w.get(i, j) * di;
            }
        }
        if l > 0 {
            for (pj, zj) in prev.iter_mut().zip(&tape.pre[l - 1]) {
                if *zj <= 0.0 {
                    *pj = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok(Grads { w: w_grads, b: b_grads, x: delta })
}

/// Numerically stabilized softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one logit vector against a class index, stabilized by
/// max subtraction so large margins cannot overflow.
pub fn cross_entropy(logits: &[f32], y: usize) -> f32 {
    debug_assert!(y < logits.len());
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let sum: f64 = logits.iter().map(|z| f64::from(z - m).exp()).sum();
    (sum.ln() - f64::from(logits[y] - m)) as f32
}

/// Mean cross-entropy over a batch of logit vectors.
pub fn cross_entropy_mean(batch: &[(Vec<f32>, usize)]) -> f32 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .map(|(logits, y)| f64::from(cross_entropy(logits, *y)))
        .sum();
    (total / batch.len() as f64) as f32
}

/// Loss derivative at the logits: `softmax(logits) - onehot(y)`.
pub fn cross_entropy_grad(logits: &[f32], y: usize) -> Vec<f32> {
    let mut g = softmax(logits);
    g[y] -= 1.0;
    g
}

/// Serialize a network in the documented byte format.
pub fn save(net: &Network, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for layer in &net.layers {
        buf.extend_from_slice(&(layer.w.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.w.cols() as u32).to_le_bytes());
        for v in layer.w.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in layer.b.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format {
                path: self.path.display().to_string(),
                reason: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Read a network back; validates magic, version, shape chain, and length.
pub fn load(path: &Path) -> Result<Network> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut cur = Cursor { data: &data, pos: 0, path };
    let fail = |reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };

    if cur.take(4)? != MODEL_MAGIC {
        return Err(fail("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let layer_count = cur.u32()? as usize;
    if layer_count == 0 {
        return Err(fail("zero layers".into()));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        if rows == 0 || cols == 0 {
            return Err(fail("zero-sized layer".into()));
        }
        let w = Mat32::new(rows, cols, cur.f32s(rows * cols)?)
            .map_err(|e| fail(e.to_string()))?;
        let b = Vec32::new(cur.f32s(rows)?).map_err(|e| fail(e.to_string()))?;
        layers.push(Layer { w, b });
    }
    if cur.pos != data.len() {
        return Err(fail(format!("{} trailing bytes", data.len() - cur.pos)));
    }
    Network::new(layers).map_err(|e| fail(e.to_string()))
}
