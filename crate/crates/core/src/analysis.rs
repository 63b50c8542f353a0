//! Sound symbolic bound propagation for ReLU networks.
//!
//! Every neuron is bracketed by two affine expressions over the *input*
//! variables, `Eq_low` and `Eq_up`, whose concrete ranges over an input box
//! are evaluated with outward-rounded interval arithmetic. ReLUs relax the
//! expressions case by case (stable-negative, stable-positive, crossing).
//! From the output-layer bounds come the worst-case logit vector, the
//! verifiable robust loss that upper-bounds every concrete loss in the box,
//! and the interval gradient used by bound-guided attacks and training.
//!
//! # Soundness
//!
//! The propagated forms bound the exact real-arithmetic network. Coefficient
//! arithmetic runs in f64; the rounding error of storing coefficients back
//! to f32, plus an explicit summation error bound, is pushed into the
//! constant term in the widening direction, weighted by the box magnitude of
//! each variable. Concrete range evaluation rounds outward the same way, so
//! no point of the box can escape its bounds.

use crate::model::{cross_entropy, softmax, Network};
use crate::numerics::{interval_add, interval_relu, matvec_interval, Interval, Mat32};
use crate::{Error, Result};

const EPS64: f64 = f64::EPSILON;

/// An axis-aligned box in input space: an L-infinity ball of radius `eps`
/// around a center, clamped to the input domain.
///
/// Bisection produces sub-boxes that are no longer centered; `lo`/`hi` are
/// authoritative and `center` is their midpoint for such boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBox {
    center: Vec<f32>,
    eps: f32,
    lo: Vec<f32>,
    hi: Vec<f32>,
}

impl InputBox {
    /// Outer enclosure of the L-infinity ball: radius arithmetic is rounded
    /// away from the center before clamping, so the exact-arithmetic ball is
    /// covered. Use for verification.
    pub fn around(center: &[f32], eps: f32, domain_lo: &[f32], domain_hi: &[f32]) -> Result<Self> {
        Self::around_impl(center, eps, domain_lo, domain_hi, true)
    }

    /// Inner box: radius arithmetic is rounded toward the center, so every
    /// member provably satisfies the budget in exact arithmetic. Use for
    /// attacks, whose outputs must never exceed the budget.
    pub fn around_inner(
        center: &[f32],
        eps: f32,
        domain_lo: &[f32],
        domain_hi: &[f32],
    ) -> Result<Self> {
        Self::around_impl(center, eps, domain_lo, domain_hi, false)
    }

    fn around_impl(
        center: &[f32],
        eps: f32,
        domain_lo: &[f32],
        domain_hi: &[f32],
        outer: bool,
    ) -> Result<Self> {
        if domain_lo.len() != center.len() || domain_hi.len() != center.len() {
            return Err(Error::DimMismatch {
                context: "InputBox::around domain",
                expected: center.len(),
                got: domain_lo.len().min(domain_hi.len()),
            });
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be >= 0, got {eps}")));
        }
        let mut lo = Vec::with_capacity(center.len());
        let mut hi = Vec::with_capacity(center.len());
        for ((c, dl), dh) in center.iter().zip(domain_lo).zip(domain_hi) {
            if !(dl <= c && c <= dh) {
                return Err(Error::InvalidConfig(format!(
                    "center {c} outside domain [{dl}, {dh}]"
                )));
            }
            let (mut l, mut h) = (c - eps, c + eps);
            if outer {
                if f64::from(*c) - f64::from(l) < f64::from(eps) {
                    l = l.next_down();
                }
                if f64::from(h) - f64::from(*c) < f64::from(eps) {
                    h = h.next_up();
                }
            } else {
                while f64::from(*c) - f64::from(l) > f64::from(eps) {
                    l = l.next_up();
                }
                while f64::from(h) - f64::from(*c) > f64::from(eps) {
                    h = h.next_down();
                }
            }
            lo.push(l.max(*dl).min(*c));
            hi.push(h.min(*dh).max(*c));
        }
        Ok(Self { center: center.to_vec(), eps, lo, hi })
    }

    /// Box from explicit per-dim bounds (bisection children).
    pub fn from_bounds(lo: Vec<f32>, hi: Vec<f32>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimMismatch {
                context: "InputBox::from_bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let mut center = Vec::with_capacity(lo.len());
        let mut eps = 0.0f32;
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::InvalidConfig(format!("bad box dim [{l}, {h}]")));
            }
            center.push(l + (h - l) / 2.0);
            eps = eps.max((h - l) / 2.0);
        }
        Ok(Self { center, eps, lo, hi })
    }

    /// Degenerate box holding a single point.
    pub fn point(x: &[f32]) -> Self {
        Self { center: x.to_vec(), eps: 0.0, lo: x.to_vec(), hi: x.to_vec() }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    #[inline]
    pub fn center(&self) -> &[f32] {
        &self.center
    }

    #[inline]
    pub fn eps(&self) -> f32 {
        self.eps
    }

    #[inline]
    pub fn lo(&self) -> &[f32] {
        &self.lo
    }

    #[inline]
    pub fn hi(&self) -> &[f32] {
        &self.hi
    }

    #[inline]
    pub fn width(&self, i: usize) -> f32 {
        self.hi[i] - self.lo[i]
    }

    pub fn interval(&self, i: usize) -> Interval {
        Interval::new(self.lo[i], self.hi[i]).expect("box invariant")
    }

    pub fn contains(&self, x: &[f32]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Split along one dimension at the f32 midpoint, children sharing the
    /// split plane. None if the dimension is too narrow to split.
    pub fn split(&self, dim: usize) -> Option<(InputBox, InputBox)> {
        let (l, h) = (self.lo[dim], self.hi[dim]);
        let mid = l + (h - l) / 2.0;
        if !(l < mid && mid < h) {
            return None;
        }
        let mut left = self.clone();
        left.hi[dim] = mid;
        let mut right = self.clone();
        right.lo[dim] = mid;
        for b in [&mut left, &mut right] {
            for i in 0..b.center.len() {
                b.center[i] = b.lo[i] + (b.hi[i] - b.lo[i]) / 2.0;
            }
            b.eps = (0..b.center.len())
                .map(|i| (b.hi[i] - b.lo[i]) / 2.0)
                .fold(0.0, f32::max);
        }
        Some((left, right))
    }
}

/// Affine forms for one layer: row i of `coeffs` plus `consts[i]` is the
/// expression for neuron i over the input variables.
#[derive(Clone, Debug)]
pub struct LayerForms {
    pub coeffs: Mat32,
    pub consts: Vec<f32>,
}

/// Symbolic bounds of one layer's pre-activation values.
///
/// `low`/`up` are the per-neuron affine expressions; `low_range`/`up_range`
/// their concrete ranges over the box (outward-rounded). The neuron value
/// itself lies in `[low_range[i].lo(), up_range[i].hi()]`.
#[derive(Clone, Debug)]
pub struct SymbolicBounds {
    pub low: LayerForms,
    pub up: LayerForms,
    pub low_range: Vec<Interval>,
    pub up_range: Vec<Interval>,
}

impl SymbolicBounds {
    /// Sound enclosure of neuron i over the box.
    pub fn neuron_range(&self, i: usize) -> Interval {
        Interval::new(self.low_range[i].lo(), self.up_range[i].hi()).expect("bounds invariant")
    }
}

/// Worst-case logits for a target label: the true-label logit replaced by
/// its lower bound, every other logit by its upper bound.
#[derive(Clone, Debug)]
pub struct WorstCaseLogits {
    pub d: Vec<f32>,
    pub y: usize,
}

impl WorstCaseLogits {
    /// Robustness holds only when the true label wins strictly; ties count
    /// as not verified.
    pub fn verified(&self) -> bool {
        self.d
            .iter()
            .enumerate()
            .all(|(j, dj)| j == self.y || self.d[self.y] > *dj)
    }
}

/// How a ReLU transformed the upper equation of one neuron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpCase {
    Zero,
    Pass,
    /// `Eq_up' = k * (Eq_up - l)`: the chord over `[l, u_up]`.
    Chord { k: f64, l: f64 },
}

/// How a ReLU transformed the lower equation of one neuron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LowCase {
    Zero,
    Pass,
    /// `Eq_low' = k * Eq_low` with `k` in `[0, 1]`.
    Scale { k: f64 },
}

/// Per hidden layer, per neuron relaxation cases. Reusing a recorded
/// pattern freezes the linearization, making the whole propagation an
/// affine function of the box; gradients and finite differences then agree.
pub type RelaxPattern = Vec<Vec<(UpCase, LowCase)>>;

/// Which constant-term direction soundness requires.
#[derive(Clone, Copy, PartialEq)]
enum Dir {
    Up,
    Low,
}

/// f64 accumulator for one affine form: coefficient values plus per-column
/// absolute error budgets that are folded into the constant on store.
struct FormAcc {
    c: Vec<f64>,
    err: Vec<f64>,
    konst: f64,
    konst_err: f64,
}

impl FormAcc {
    fn zeros(d: usize) -> Self {
        Self { c: vec![0.0; d], err: vec![0.0; d], konst: 0.0, konst_err: 0.0 }
    }

    fn reset(&mut self) {
        self.c.fill(0.0);
        self.err.fill(0.0);
        self.konst = 0.0;
        self.konst_err = 0.0;
    }

    /// Store to f32. Every per-column error (cast + accumulation) moves into
    /// the constant, weighted by the box magnitude of that variable, in the
    /// direction that widens the bound.
    fn finalize(&self, box_abs: &[f64], dir: Dir, coeffs_out: &mut Vec<f32>) -> f32 {
        let mut slack = self.konst_err;
        for ((v, e), m) in self.c.iter().zip(&self.err).zip(box_abs) {
            let c32 = *v as f32;
            slack += ((v - f64::from(c32)).abs() + e) * m;
            coeffs_out.push(c32);
        }
        match dir {
            Dir::Up => {
                let v = (self.konst + slack) as f32;
                if v.is_finite() { v.next_up() } else { v }
            }
            Dir::Low => {
                let v = (self.konst - slack) as f32;
                if v.is_finite() { v.next_down() } else { v }
            }
        }
    }
}

/// Sound concrete range of a stored f32 affine form over the box.
fn form_bounds(coeffs: &[f32], konst: f32, bx: &InputBox) -> Interval {
    let mut lo = f64::from(konst);
    let mut hi = lo;
    let mut abs = lo.abs();
    for (i, c) in coeffs.iter().enumerate() {
        let c = f64::from(*c);
        let (l, h) = (f64::from(bx.lo[i]), f64::from(bx.hi[i]));
        let (a, b) = if c >= 0.0 { (c * l, c * h) } else { (c * h, c * l) };
        lo += a;
        hi += b;
        abs += a.abs().max(b.abs());
    }
    let err = (coeffs.len() as f64 + 2.0) * EPS64 * abs;
    let l32 = (lo - err) as f32;
    let h32 = (hi + err) as f32;
    Interval::new(
        if l32.is_finite() { l32.next_down() } else { l32 },
        if h32.is_finite() { h32.next_up() } else { h32 },
    )
    .expect("ordered by construction")
}

fn next_up_f64(x: f64) -> f64 {
    if x.is_finite() {
        f64::from_bits(if x >= 0.0 { x.to_bits() + 1 } else { x.to_bits() - 1 })
    } else {
        x
    }
}

/// Full propagation state; `post` is kept only when gradients are needed.
struct SymState {
    pre: Vec<SymbolicBounds>,
    post: Vec<(LayerForms, LayerForms)>,
    relax: RelaxPattern,
}

fn sym_forward(
    net: &Network,
    bx: &InputBox,
    frozen: Option<&RelaxPattern>,
    keep_post: bool,
) -> Result<SymState> {
    let d = bx.dim();
    if net.input_dim() != d {
        return Err(Error::DimMismatch {
            context: "propagate",
            expected: net.input_dim(),
            got: d,
        });
    }
    if let Some(f) = frozen {
        if f.len() != net.layers().len() - 1 {
            return Err(Error::DimMismatch {
                context: "propagate frozen pattern",
                expected: net.layers().len() - 1,
                got: f.len(),
            });
        }
    }
    let box_abs: Vec<f64> = (0..d)
        .map(|i| f64::from(bx.lo[i]).abs().max(f64::from(bx.hi[i]).abs()))
        .collect();
    let n_layers = net.layers().len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut post = Vec::new();
    let mut relax: RelaxPattern = Vec::with_capacity(n_layers - 1);
    let mut carried: Option<(LayerForms, LayerForms)> = None;

    for (l, layer) in net.layers().iter().enumerate() {
        let n = layer.w.rows();
        let mut up_co = Vec::with_capacity(n * d);
        let mut up_k = Vec::with_capacity(n);
        let mut lo_co = Vec::with_capacity(n * d);
        let mut lo_k = Vec::with_capacity(n);

        match &carried {
            None => {
                // First layer reads the inputs directly: the forms are the
                // weight rows and biases, exactly.
                for i in 0..n {
                    up_co.extend_from_slice(layer.w.row(i));
                    lo_co.extend_from_slice(layer.w.row(i));
                    up_k.push(layer.b[i]);
                    lo_k.push(layer.b[i]);
                }
            }
            Some((cu, cl)) => {
                let m = cu.coeffs.rows();
                let sum_factor = (m as f64 + 2.0) * EPS64;
                let mut up_acc = FormAcc::zeros(d);
                let mut lo_acc = FormAcc::zeros(d);
                for i in 0..n {
                    up_acc.reset();
                    lo_acc.reset();
                    let b = f64::from(layer.b[i]);
                    up_acc.konst = b;
                    lo_acc.konst = b;
                    let mut up_kabs = b.abs();
                    let mut lo_kabs = b.abs();
                    for j in 0..m {
                        let w = f64::from(layer.w.get(i, j));
                        if w == 0.0 {
                            continue;
                        }
                        // Positive weight keeps direction; negative swaps
                        // upper and lower source forms.
                        let (src_up, src_lo) = if w > 0.0 { (cu, cl) } else { (cl, cu) };
                        let su = src_up.coeffs.row(j);
                        let sl = src_lo.coeffs.row(j);
                        for v in 0..d {
                            let pu = w * f64::from(su[v]);
                            up_acc.c[v] += pu;
                            up_acc.err[v] += pu.abs() * sum_factor;
                            let pl = w * f64::from(sl[v]);
                            lo_acc.c[v] += pl;
                            lo_acc.err[v] += pl.abs() * sum_factor;
                        }
                        let ku = w * f64::from(src_up.consts[j]);
                        up_acc.konst += ku;
                        up_kabs += ku.abs();
                        let kl = w * f64::from(src_lo.consts[j]);
                        lo_acc.konst += kl;
                        lo_kabs += kl.abs();
                    }
                    up_acc.konst_err = up_kabs * sum_factor;
                    lo_acc.konst_err = lo_kabs * sum_factor;
                    up_k.push(up_acc.finalize(&box_abs, Dir::Up, &mut up_co));
                    lo_k.push(lo_acc.finalize(&box_abs, Dir::Low, &mut lo_co));
                }
            }
        }

        let up = LayerForms { coeffs: Mat32::new(n, d, up_co)?, consts: up_k };
        let low = LayerForms { coeffs: Mat32::new(n, d, lo_co)?, consts: lo_k };
        let up_range: Vec<Interval> = (0..n)
            .map(|i| form_bounds(up.coeffs.row(i), up.consts[i], bx))
            .collect();
        let low_range: Vec<Interval> = (0..n)
            .map(|i| form_bounds(low.coeffs.row(i), low.consts[i], bx))
            .collect();
        let bounds = SymbolicBounds { low, up, low_range, up_range };

        if l + 1 < n_layers {
            let (next, cases) = relax_layer(&bounds, &box_abs, frozen.map(|f| &f[l]))?;
            relax.push(cases);
            if keep_post {
                post.push((next.0.clone(), next.1.clone()));
            }
            carried = Some(next);
        }
        pre.push(bounds);
    }
    Ok(SymState { pre, post, relax })
}

/// Apply the three-case ReLU relaxation to one layer's bounds, producing the
/// forms that feed the next layer and the per-neuron case record.
///
/// Cases, per equation: stable-negative becomes the zero form, stable-
/// positive passes through, and a crossing equation is replaced by its
/// chord (upper) or scaled toward zero (lower). The chord slope is rounded
/// up so the line through `(l, 0)` stays above relu on the whole range; any
/// lower slope in `[0, 1]` is below relu everywhere.
/// Upper and lower post-ReLU forms plus the per-neuron case record.
type RelaxedLayer = ((LayerForms, LayerForms), Vec<(UpCase, LowCase)>);

fn relax_layer(
    b: &SymbolicBounds,
    box_abs: &[f64],
    frozen: Option<&Vec<(UpCase, LowCase)>>,
) -> Result<RelaxedLayer> {
    let n = b.up.coeffs.rows();
    let d = b.up.coeffs.cols();
    if let Some(f) = frozen {
        if f.len() != n {
            return Err(Error::DimMismatch {
                context: "relax_layer frozen pattern",
                expected: n,
                got: f.len(),
            });
        }
    }
    let mut up_co = Vec::with_capacity(n * d);
    let mut up_k = Vec::with_capacity(n);
    let mut lo_co = Vec::with_capacity(n * d);
    let mut lo_k = Vec::with_capacity(n);
    let mut cases = Vec::with_capacity(n);
    let mut acc = FormAcc::zeros(d);

    for i in 0..n {
        let (up_case, low_case) = match frozen {
            Some(f) => f[i],
            None => {
                let (l_up, u_up) =
                    (f64::from(b.up_range[i].lo()), f64::from(b.up_range[i].hi()));
                let (l_lo, u_lo) =
                    (f64::from(b.low_range[i].lo()), f64::from(b.low_range[i].hi()));
                let up_case = if u_up <= 0.0 {
                    UpCase::Zero
                } else if l_up >= 0.0 {
                    UpCase::Pass
                } else {
                    UpCase::Chord { k: next_up_f64(u_up / (u_up - l_up)), l: l_up }
                };
                let low_case = if u_lo <= 0.0 {
                    LowCase::Zero
                } else if l_lo >= 0.0 {
                    LowCase::Pass
                } else {
                    LowCase::Scale { k: (u_lo / (u_lo - l_lo)).clamp(0.0, 1.0) }
                };
                (up_case, low_case)
            }
        };
        cases.push((up_case, low_case));

        match up_case {
            UpCase::Zero => {
                up_co.extend(std::iter::repeat_n(0.0f32, d));
                up_k.push(0.0);
            }
            UpCase::Pass => {
                up_co.extend_from_slice(b.up.coeffs.row(i));
                up_k.push(b.up.consts[i]);
            }
            UpCase::Chord { k, l } => {
                acc.reset();
                for (v, c) in b.up.coeffs.row(i).iter().enumerate() {
                    let p = k * f64::from(*c);
                    acc.c[v] = p;
                    // Covers the division rounding inside k and the product.
                    acc.err[v] = p.abs() * 4.0 * EPS64;
                }
                acc.konst = k * (f64::from(b.up.consts[i]) - l);
                acc.konst_err = acc.konst.abs() * 4.0 * EPS64;
                up_k.push(acc.finalize(box_abs, Dir::Up, &mut up_co));
            }
        }
        match low_case {
            LowCase::Zero => {
                lo_co.extend(std::iter::repeat_n(0.0f32, d));
                lo_k.push(0.0);
            }
            LowCase::Pass => {
                lo_co.extend_from_slice(b.low.coeffs.row(i));
                lo_k.push(b.low.consts[i]);
            }
            LowCase::Scale { k } => {
                acc.reset();
                for (v, c) in b.low.coeffs.row(i).iter().enumerate() {
                    let p = k * f64::from(*c);
                    acc.c[v] = p;
                    acc.err[v] = p.abs() * 4.0 * EPS64;
                }
                acc.konst = k * f64::from(b.low.consts[i]);
                acc.konst_err = acc.konst.abs() * 4.0 * EPS64;
                lo_k.push(acc.finalize(box_abs, Dir::Low, &mut lo_co));
            }
        }
    }
    Ok((
        (
            LayerForms { coeffs: Mat32::new(n, d, up_co)?, consts: up_k },
            LayerForms { coeffs: Mat32::new(n, d, lo_co)?, consts: lo_k },
        ),
        cases,
    ))
}

/// Symbolic bounds of every layer's pre-activations over the box. The last
/// entry bounds the logits.
pub fn propagate(net: &Network, bx: &InputBox) -> Result<Vec<SymbolicBounds>> {
    Ok(sym_forward(net, bx, None, false)?.pre)
}

/// Like [`propagate`], also returning the per-neuron relaxation cases so a
/// later pass can be run with the identical linearization.
pub fn propagate_recorded(
    net: &Network,
    bx: &InputBox,
) -> Result<(Vec<SymbolicBounds>, RelaxPattern)> {
    let st = sym_forward(net, bx, None, false)?;
    Ok((st.pre, st.relax))
}

/// Propagate with the relaxation pattern pinned to `pattern` instead of
/// re-deriving cases from the concrete ranges. With a pinned pattern the
/// whole map is affine in the box, which is what gradient checks need.
pub fn propagate_frozen(
    net: &Network,
    bx: &InputBox,
    pattern: &RelaxPattern,
) -> Result<Vec<SymbolicBounds>> {
    Ok(sym_forward(net, bx, Some(pattern), false)?.pre)
}

/// Cheap mode: plain interval propagation (no symbolic forms). Returns the
/// pre-activation enclosure of every layer. Wider than [`propagate`] but
/// much faster for very wide layers.
pub fn propagate_concrete(net: &Network, bx: &InputBox) -> Result<Vec<Vec<Interval>>> {
    if net.input_dim() != bx.dim() {
        return Err(Error::DimMismatch {
            context: "propagate_concrete",
            expected: net.input_dim(),
            got: bx.dim(),
        });
    }
    let mut acts: Vec<Interval> = (0..bx.dim()).map(|i| bx.interval(i)).collect();
    let last = net.layers().len() - 1;
    let mut out = Vec::with_capacity(net.layers().len());
    for (l, layer) in net.layers().iter().enumerate() {
        let mut z = matvec_interval(&layer.w, &acts)?;
        for (zi, bi) in z.iter_mut().zip(layer.b.as_slice()) {
            *zi = interval_add(*zi, Interval::point(*bi));
        }
        out.push(z.clone());
        if l < last {
            acts = z.into_iter().map(interval_relu).collect();
        }
    }
    Ok(out)
}

/// Worst-case logit vector from the output layer's bounds: the true label
/// gets its concrete lower bound, every other class its upper bound.
pub fn worst_case_logits(bounds_out: &SymbolicBounds, y: usize) -> WorstCaseLogits {
    let k = bounds_out.low_range.len();
    debug_assert!(y < k);
    let d = (0..k)
        .map(|j| {
            if j == y {
                bounds_out.low_range[j].lo()
            } else {
                bounds_out.up_range[j].hi()
            }
        })
        .collect();
    WorstCaseLogits { d, y }
}

/// Worst-case logits from the cheap interval mode.
pub fn worst_case_logits_concrete(logit_ranges: &[Interval], y: usize) -> WorstCaseLogits {
    let d = logit_ranges
        .iter()
        .enumerate()
        .map(|(j, r)| if j == y { r.lo() } else { r.hi() })
        .collect();
    WorstCaseLogits { d, y }
}

/// Upper bound on the cross-entropy loss of *any* point in the box: the
/// loss of the worst-case logits.
pub fn verifiable_robust_loss(net: &Network, bx: &InputBox, y: usize) -> Result<f32> {
    let bounds = propagate(net, bx)?;
    let wcl = worst_case_logits(bounds.last().unwrap(), y);
    Ok(cross_entropy(&wcl.d, y))
}

/// Gradient of the verifiable robust loss with respect to the box *center*,
/// holding the relaxation slopes and bound selections constant.
///
/// With the linearization fixed, each worst-case logit is affine in a box
/// translation with slope equal to its equation's input coefficients: the
/// true label contributes its lower equation, every other class its upper
/// equation, weighted by the softmax loss gradient.
pub fn interval_gradient(net: &Network, bx: &InputBox, y: usize) -> Result<Vec<f32>> {
    let bounds = propagate(net, bx)?;
    Ok(interval_gradient_from(bounds.last().unwrap(), bx.dim(), y))
}

/// Same gradient computed from already-propagated output bounds, so callers
/// that hold the propagation result (bisection) avoid a second pass.
pub fn interval_gradient_from(out: &SymbolicBounds, d_in: usize, y: usize) -> Vec<f32> {
    let wcl = worst_case_logits(out, y);
    let p = softmax(&wcl.d);
    let mut g = vec![0.0f64; d_in];
    for (j, &pj) in p.iter().enumerate() {
        let (coeff, weight) = if j == y {
            (out.low.coeffs.row(j), f64::from(pj) - 1.0)
        } else {
            (out.up.coeffs.row(j), f64::from(pj))
        };
        for (gi, c) in g.iter_mut().zip(coeff) {
            *gi += weight * f64::from(*c);
        }
    }
    g.into_iter().map(|v| v as f32).collect()
}

/// Loss, worst-case logits, and parameter gradients of the verifiable
/// robust loss for one box, with the relaxation pattern and bound
/// selections held constant (straight-through linearization).
#[derive(Clone, Debug)]
pub struct RobustGrads {
    pub loss: f32,
    pub d: Vec<f32>,
    pub w: Vec<Mat32>,
    pub b: Vec<Vec<f32>>,
}

/// Reverse-mode differentiation of [`verifiable_robust_loss`] with respect
/// to every weight and bias.
///
/// The forward pass is the sound propagation; the backward pass treats the
/// per-neuron relaxation slopes, the weight sign split, and the per-variable
/// endpoint selections of the final concretization as constants.
pub fn robust_loss_grads(net: &Network, bx: &InputBox, y: usize) -> Result<RobustGrads> {
    let st = sym_forward(net, bx, None, true)?;
    let d_in = bx.dim();
    let cols = d_in + 1; // coefficient columns plus the constant column
    let n_layers = net.layers().len();
    let out = st.pre.last().unwrap();
    let k = out.low_range.len();
    if y >= k {
        return Err(Error::InvalidConfig(format!("label {y} out of range for {k} classes")));
    }
    let wcl = worst_case_logits(out, y);
    let loss = cross_entropy(&wcl.d, y);
    let p = softmax(&wcl.d);

    // Endpoint the concretization picked for each variable, as f64.
    let lo64: Vec<f64> = bx.lo.iter().map(|v| f64::from(*v)).collect();
    let hi64: Vec<f64> = bx.hi.iter().map(|v| f64::from(*v)).collect();

    // Gradients w.r.t. the current layer's pre-activation upper/lower forms,
    // laid out n x (d_in + 1).
    let mut gu = vec![0.0f64; k * cols];
    let mut gl = vec![0.0f64; k * cols];
    for j in 0..k {
        if j == y {
            let w = f64::from(p[j]) - 1.0;
            let row = out.low.coeffs.row(j);
            let g = &mut gl[j * cols..(j + 1) * cols];
            for v in 0..d_in {
                // Lower concretization picks lo for positive coefficients.
                g[v] = w * if row[v] > 0.0 { lo64[v] } else { hi64[v] };
            }
            g[d_in] = w;
        } else {
            let w = f64::from(p[j]);
            let row = out.up.coeffs.row(j);
            let g = &mut gu[j * cols..(j + 1) * cols];
            for v in 0..d_in {
                g[v] = w * if row[v] > 0.0 { hi64[v] } else { lo64[v] };
            }
            g[d_in] = w;
        }
    }

    let mut w_grads: Vec<Mat32> = vec![Mat32::zeros(0, 0); n_layers];
    let mut b_grads: Vec<Vec<f32>> = vec![Vec::new(); n_layers];

    for l in (0..n_layers).rev() {
        let layer = &net.layers()[l];
        let n = layer.w.rows();
        let m = layer.w.cols();
        let mut db = vec![0.0f32; n];
        for i in 0..n {
            db[i] = (gu[i * cols + d_in] + gl[i * cols + d_in]) as f32;
        }

        let mut dw = vec![0.0f32; n * m];
        if l == 0 {
            // Input forms are the identity: coefficient j of the form is
            // the only nonzero column, the constant column is zero.
            for i in 0..n {
                for j in 0..m {
                    dw[i * m + j] = (gu[i * cols + j] + gl[i * cols + j]) as f32;
                }
            }
        } else {
            let (cu, cl) = &st.post[l - 1];
            let mut next_gu = vec![0.0f64; m * cols];
            let mut next_gl = vec![0.0f64; m * cols];
            for i in 0..n {
                let gui = &gu[i * cols..(i + 1) * cols];
                let gli = &gl[i * cols..(i + 1) * cols];
                for j in 0..m {
                    let w = f64::from(layer.w.get(i, j));
                    let (su, sl) = if w >= 0.0 {
                        (cu.coeffs.row(j), cl.coeffs.row(j))
                    } else {
                        (cl.coeffs.row(j), cu.coeffs.row(j))
                    };
                    let (sku, skl) = if w >= 0.0 {
                        (f64::from(cu.consts[j]), f64::from(cl.consts[j]))
                    } else {
                        (f64::from(cl.consts[j]), f64::from(cu.consts[j]))
                    };
                    let mut acc = 0.0f64;
                    for v in 0..d_in {
                        acc += gui[v] * f64::from(su[v]) + gli[v] * f64::from(sl[v]);
                    }
                    acc += gui[d_in] * sku + gli[d_in] * skl;
                    dw[i * m + j] = acc as f32;

                    // Push gradient onto the source forms.
                    let (tu, tl) = if w >= 0.0 {
                        (&mut next_gu, &mut next_gl)
                    } else {
                        (&mut next_gl, &mut next_gu)
                    };
                    let trow = &mut tu[j * cols..(j + 1) * cols];
                    for v in 0..cols {
                        trow[v] += w * gui[v];
                    }
                    let trow = &mut tl[j * cols..(j + 1) * cols];
                    for v in 0..cols {
                        trow[v] += w * gli[v];
                    }
                }
            }
            // Through the relaxation of layer l-1: the post forms are an
            // elementwise affine map of the pre forms.
            for (j, (up_case, low_case)) in st.relax[l - 1].iter().enumerate() {
                let row = &mut next_gu[j * cols..(j + 1) * cols];
                match up_case {
                    UpCase::Zero => row.fill(0.0),
                    UpCase::Pass => {}
                    UpCase::Chord { k, .. } => {
                        for v in row.iter_mut() {
                            *v *= k;
                        }
                    }
                }
                let row = &mut next_gl[j * cols..(j + 1) * cols];
                match low_case {
                    LowCase::Zero => row.fill(0.0),
                    LowCase::Pass => {}
                    LowCase::Scale { k } => {
                        for v in row.iter_mut() {
                            *v *= k;
                        }
                    }
                }
            }
            gu = next_gu;
            gl = next_gl;
        }
        w_grads[l] = Mat32::new(n, m, dw)?;
        b_grads[l] = db;
    }

    Ok(RobustGrads { loss, d: wcl.d, w: w_grads, b: b_grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, Layer, Network};
    use crate::numerics::{Rng, Vec32};

    fn unit_domain(d: usize) -> (Vec<f32>, Vec<f32>) {
        (vec![0.0; d], vec![1.0; d])
    }

    fn rand_net(dims: &[usize], seed: u64) -> Network {
        Network::kaiming(dims, &mut Rng::seed(seed)).unwrap()
    }

    // f64 forward oracle, independent of model::forward.
    fn forward64(net: &Network, x: &[f64]) -> Vec<f64> {
        let last = net.layers().len() - 1;
        let mut a = x.to_vec();
        for (l, layer) in net.layers().iter().enumerate() {
            let mut z = vec![0.0f64; layer.w.rows()];
            for (i, zi) in z.iter_mut().enumerate() {
                for (j, aj) in a.iter().enumerate() {
                    *zi += f64::from(layer.w.get(i, j)) * aj;
                }
                *zi += f64::from(layer.b[i]);
                if l < last {
                    *zi = zi.max(0.0);
                }
            }
            a = z;
        }
        a
    }

    fn sample_in(bx: &InputBox, rng: &mut Rng) -> Vec<f64> {
        (0..bx.dim())
            .map(|i| {
                let t = f64::from(rng.uniform(0.0, 1.0));
                f64::from(bx.lo()[i]) + t * (f64::from(bx.hi()[i]) - f64::from(bx.lo()[i]))
            })
            .collect()
    }

    #[test]
    fn box_around_covers_exact_ball_and_clamps() {
        let bx = InputBox::around(&[0.05, 0.95], 0.1, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        // Clamped at the domain walls.
        assert_eq!(bx.lo()[0], 0.0);
        assert_eq!(bx.hi()[1], 1.0);
        // Unclamped sides cover the exact radius.
        assert!(f64::from(bx.hi()[0]) - 0.05 >= 0.1);
        assert!(0.95 - f64::from(bx.lo()[1]) >= 0.1);
    }

    #[test]
    fn box_inner_never_exceeds_budget() {
        let mut rng = Rng::seed(2);
        for _ in 0..200 {
            let c = rng.uniform(0.0, 1.0);
            let eps = rng.uniform(0.0, 0.3);
            let bx = InputBox::around_inner(&[c], eps, &[0.0], &[1.0]).unwrap();
            assert!(f64::from(c) - f64::from(bx.lo()[0]) <= f64::from(eps));
            assert!(f64::from(bx.hi()[0]) - f64::from(c) <= f64::from(eps));
        }
    }

    #[test]
    fn box_split_shares_plane_and_partitions() {
        let bx = InputBox::around(&[0.5, 0.5], 0.25, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let (a, b) = bx.split(1).unwrap();
        assert_eq!(a.hi()[1], b.lo()[1]);
        assert_eq!(a.lo()[1], bx.lo()[1]);
        assert_eq!(b.hi()[1], bx.hi()[1]);
        assert_eq!(a.lo()[0], bx.lo()[0]);
        assert_eq!(a.hi()[0], bx.hi()[0]);
        // Too-narrow dimension refuses to split.
        let thin = InputBox::from_bounds(vec![0.5], vec![0.5]).unwrap();
        assert!(thin.split(0).is_none());
    }

    #[test]
    fn identity_affine_net_forms_are_exact() {
        // Single affine layer: Eq_low = Eq_up = the exact map.
        let w = Mat32::new(2, 2, vec![1.5, -0.5, 2.0, 0.25]).unwrap();
        let b = Vec32::new(vec![0.1, -0.2]).unwrap();
        let net = Network::new(vec![Layer { w: w.clone(), b: b.clone() }]).unwrap();
        let (dl, dh) = unit_domain(2);
        let bx = InputBox::around(&[0.5, 0.5], 0.2, &dl, &dh).unwrap();
        let bounds = propagate(&net, &bx).unwrap();
        assert_eq!(bounds.len(), 1);
        let out = &bounds[0];
        assert_eq!(out.up.coeffs.as_slice(), w.as_slice());
        assert_eq!(out.low.coeffs.as_slice(), w.as_slice());
        assert_eq!(out.up.consts, b.as_slice());
        assert_eq!(out.low.consts, b.as_slice());
    }

    // Net whose output bounds over x in [-1, 1] are exactly [2x, 2x+3]:
    // a stable pass-through neuron carries 2x + 10, and two +-100-slope
    // crossing neurons contribute relaxed slopes that cancel, leaving a
    // constant gap of 3.
    fn gap_net() -> Network {
        let w1 = Mat32::new(3, 1, vec![2.0, 100.0, -100.0]).unwrap();
        let b1 = Vec32::new(vec![10.0, 0.0, 0.0]).unwrap();
        let w2 = Mat32::new(2, 3, vec![1.0, 0.03, 0.03, 0.0, 0.0, 0.0]).unwrap();
        let b2 = Vec32::new(vec![-10.0, 0.0]).unwrap();
        Network::new(vec![Layer { w: w1, b: b1 }, Layer { w: w2, b: b2 }]).unwrap()
    }

    #[test]
    fn relaxed_parallel_bounds_have_documented_slope_and_gap() {
        let net = gap_net();
        let bx = InputBox::around(&[0.0], 1.0, &[-1.0], &[1.0]).unwrap();
        let bounds = propagate(&net, &bx).unwrap();
        let out = bounds.last().unwrap();
        // Logit 0 is bracketed by [2x, 2x + 3]: both slopes are 2.
        assert!((out.low.coeffs.get(0, 0) - 2.0).abs() < 1e-3);
        assert!((out.up.coeffs.get(0, 0) - 2.0).abs() < 1e-3);
        assert!(out.low.consts[0].abs() < 1e-3);
        assert!((out.up.consts[0] - 3.0).abs() < 1e-3);
        // The interval gradient composes that slope with the loss gradient:
        // for label 0 only the lower equation of logit 0 contributes.
        let wcl = worst_case_logits(out, 0);
        let p = crate::model::softmax(&wcl.d);
        let g = interval_gradient(&net, &bx, 0).unwrap();
        let want = (f64::from(p[0]) - 1.0) * 2.0;
        assert!((f64::from(g[0]) - want).abs() < 1e-3, "{} vs {want}", g[0]);
    }

    #[test]
    fn containment_random_2442_net() {
        let net = rand_net(&[2, 4, 4, 2], 33);
        let (dl, dh) = unit_domain(2);
        let bx = InputBox::around(&[0.4, 0.7], 0.05, &dl, &dh).unwrap();
        let bounds = propagate(&net, &bx).unwrap();
        let out = bounds.last().unwrap();
        let mut rng = Rng::seed(100);
        for _ in 0..100_000 {
            let x = sample_in(&bx, &mut rng);
            let z = forward64(&net, &x);
            for (j, zj) in z.iter().enumerate() {
                assert!(
                    f64::from(out.low_range[j].lo()) <= *zj
                        && *zj <= f64::from(out.up_range[j].hi()),
                    "logit {j}: {zj} escapes [{}, {}]",
                    out.low_range[j].lo(),
                    out.up_range[j].hi()
                );
            }
        }
    }

    #[test]
    fn containment_holds_per_layer_and_for_forms() {
        // Stronger check on a deeper net: every layer's pre-activation and
        // the affine forms themselves bracket the sampled values.
        let net = rand_net(&[3, 8, 6, 4, 3], 71);
        let (dl, dh) = unit_domain(3);
        let bx = InputBox::around(&[0.3, 0.5, 0.8], 0.08, &dl, &dh).unwrap();
        let bounds = propagate(&net, &bx).unwrap();
        let mut rng = Rng::seed(7);
        for _ in 0..2000 {
            let x = sample_in(&bx, &mut rng);
            // Recompute pre-activations per layer in f64.
            let mut a = x.clone();
            for (l, layer) in net.layers().iter().enumerate() {
                let mut z = vec![0.0f64; layer.w.rows()];
                for (i, zi) in z.iter_mut().enumerate() {
                    for (j, aj) in a.iter().enumerate() {
                        *zi += f64::from(layer.w.get(i, j)) * aj;
                    }
                    *zi += f64::from(layer.b[i]);
                }
                for (i, zi) in z.iter().enumerate() {
                    let b = &bounds[l];
                    // Form evaluations bracket the value...
                    let mut lo_form = f64::from(b.low.consts[i]);
                    let mut up_form = f64::from(b.up.consts[i]);
                    for (v, xv) in x.iter().enumerate() {
                        lo_form += f64::from(b.low.coeffs.get(i, v)) * xv;
                        up_form += f64::from(b.up.coeffs.get(i, v)) * xv;
                    }
                    assert!(lo_form <= zi + 1e-9, "layer {l} neuron {i}");
                    assert!(up_form >= zi - 1e-9, "layer {l} neuron {i}");
                    // ...and the concrete ranges bracket the forms.
                    assert!(f64::from(b.low_range[i].lo()) <= lo_form + 1e-9);
                    assert!(f64::from(b.up_range[i].hi()) >= up_form - 1e-9);
                }
                a = z
                    .into_iter()
                    .map(|v| if l < net.layers().len() - 1 { v.max(0.0) } else { v })
                    .collect();
            }
        }
    }

    #[test]
    fn concrete_mode_contains_sampled_logits() {
        let net = rand_net(&[2, 6, 4, 2], 44);
        let (dl, dh) = unit_domain(2);
        let bx = InputBox::around(&[0.5, 0.5], 0.1, &dl, &dh).unwrap();
        let ranges = propagate_concrete(&net, &bx).unwrap();
        let out = ranges.last().unwrap();
        let mut rng = Rng::seed(9);
        for _ in 0..20_000 {
            let x = sample_in(&bx, &mut rng);
            let z = forward64(&net, &x);
            for (j, zj) in z.iter().enumerate() {
                assert!(
                    f64::from(out[j].lo()) <= *zj && *zj <= f64::from(out[j].hi()),
                    "logit {j}: {zj} escapes concrete [{}, {}]",
                    out[j].lo(),
                    out[j].hi()
                );
            }
        }
    }

    #[test]
    fn stable_net_worst_case_equals_endpoint_enumeration() {
        // One input, all ReLUs stable over the box: the net is affine
        // there, so the exact extremes sit at the two box endpoints.
        let w1 = Mat32::new(2, 1, vec![3.0, -2.0]).unwrap();
        let b1 = Vec32::new(vec![5.0, 4.0]).unwrap(); // stays positive on [0, 0.5]
        let w2 = Mat32::new(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let b2 = Vec32::new(vec![0.0, -1.0]).unwrap();
        let net = Network::new(vec![Layer { w: w1, b: b1 }, Layer { w: w2, b: b2 }]).unwrap();
        let bx = InputBox::around(&[0.25], 0.25, &[0.0], &[1.0]).unwrap();
        let bounds = propagate(&net, &bx).unwrap();
        let wcl = worst_case_logits(bounds.last().unwrap(), 0);

        let ends = [vec![f64::from(bx.lo()[0])], vec![f64::from(bx.hi()[0])]];
        let z0: Vec<f64> = ends.iter().map(|e| forward64(&net, e)[0]).collect();
        let z1: Vec<f64> = ends.iter().map(|e| forward64(&net, e)[1]).collect();
        let want_d0 = z0[0].min(z0[1]);
        let want_d1 = z1[0].max(z1[1]);
        assert!((f64::from(wcl.d[0]) - want_d0).abs() < 1e-4, "{} vs {want_d0}", wcl.d[0]);
        assert!((f64::from(wcl.d[1]) - want_d1).abs() < 1e-4, "{} vs {want_d1}", wcl.d[1]);
        // Sound side: d_y below the true minimum, d_j above the true max.
        assert!(f64::from(wcl.d[0]) <= want_d0);
        assert!(f64::from(wcl.d[1]) >= want_d1);
    }

    #[test]
    fn degenerate_box_collapses_to_forward() {
        let net = rand_net(&[4, 8, 6, 3], 55);
        let mut rng = Rng::seed(4);
        for _ in 0..50 {
            let x: Vec<f32> = (0..4).map(|_| rng.uniform(0.0, 1.0)).collect();
            let bx = InputBox::point(&x);
            let bounds = propagate(&net, &bx).unwrap();
            let logits = forward(&net, &x).unwrap();
            let wcl = worst_case_logits(bounds.last().unwrap(), 1);
            for (dj, zj) in wcl.d.iter().zip(&logits) {
                assert!((dj - zj).abs() < 1e-4, "{dj} vs {zj}");
            }
            let loss = verifiable_robust_loss(&net, &bx, 1).unwrap();
            let want = cross_entropy(&logits, 1);
            assert!((loss - want).abs() < 1e-4);
        }
    }

    #[test]
    fn robust_loss_upper_bounds_sampled_losses() {
        let mut rng = Rng::seed(60);
        for trial in 0..10 {
            let net = rand_net(&[2, 5, 4, 3], 200 + trial);
            let (dl, dh) = unit_domain(2);
            let c = [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)];
            let bx = InputBox::around(&c, 0.06, &dl, &dh).unwrap();
            let y = (trial % 3) as usize;
            let vrl = f64::from(verifiable_robust_loss(&net, &bx, y).unwrap());
            for _ in 0..1000 {
                let x = sample_in(&bx, &mut rng);
                let z = forward64(&net, &x);
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let loss = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - (z[y] - m);
                assert!(loss <= vrl + 1e-5, "sampled {loss} > bound {vrl}");
            }
        }
    }

    #[test]
    fn robust_loss_monotone_in_eps() {
        let net = rand_net(&[2, 6, 3], 77);
        let (dl, dh) = unit_domain(2);
        let mut prev = f32::NEG_INFINITY;
        for eps in [0.0, 0.01, 0.03, 0.07, 0.15, 0.3] {
            let bx = InputBox::around(&[0.5, 0.4], eps, &dl, &dh).unwrap();
            let loss = verifiable_robust_loss(&net, &bx, 0).unwrap();
            assert!(loss >= prev - 1e-6, "loss {loss} dropped below {prev} at eps {eps}");
            prev = loss;
        }
    }

    #[test]
    fn linear_net_interval_gradient_matches_closed_form() {
        // Single affine layer: g = sum_j dL/dd_j * W[j], with the lower row
        // for the label and upper rows elsewhere (they coincide here).
        let w = Mat32::new(3, 2, vec![1.0, -2.0, 0.5, 1.5, -1.0, 0.25]).unwrap();
        let net = Network::new(vec![Layer { w: w.clone(), b: Vec32::zeros(3) }]).unwrap();
        let (dl, dh) = unit_domain(2);
        let bx = InputBox::around(&[0.5, 0.5], 0.1, &dl, &dh).unwrap();
        let bounds = propagate(&net, &bx).unwrap();
        let wcl = worst_case_logits(bounds.last().unwrap(), 2);
        let p = crate::model::softmax(&wcl.d);
        let g = interval_gradient(&net, &bx, 2).unwrap();
        for (v, &gv) in g.iter().enumerate() {
            let want = f64::from(p[0]) * f64::from(w.get(0, v))
                + f64::from(p[1]) * f64::from(w.get(1, v))
                + (f64::from(p[2]) - 1.0) * f64::from(w.get(2, v));
            assert!((f64::from(gv) - want).abs() < 1e-6, "{gv} vs {want}");
        }
    }

    #[test]
    fn interval_gradient_matches_frozen_finite_differences() {
        let mut probes = 0usize;
        for (trial, dims) in [(0u64, vec![2usize, 5, 3]), (1, vec![3, 6, 4, 2]), (2, vec![2, 8, 8, 3])]
            .into_iter()
            .enumerate()
        {
            let net = rand_net(&dims.1.clone(), 300 + dims.0);
            let d = dims.1[0];
            let (dl, dh) = (vec![-10.0f32; d], vec![10.0f32; d]);
            let mut rng = Rng::seed(40 + trial as u64);
            for probe in 0..40 {
                let c: Vec<f32> = (0..d).map(|_| rng.uniform(0.2, 0.8)).collect();
                let eps = 0.05;
                let bx = InputBox::around(&c, eps, &dl, &dh).unwrap();
                let y = probe % *dims.1.last().unwrap();
                let (_, pattern) = propagate_recorded(&net, &bx).unwrap();
                let g = interval_gradient(&net, &bx, y).unwrap();
                // With the pattern frozen the loss is smooth in the center,
                // so a generous step lifts the finite-difference signal
                // well above the f32 storage noise of the propagation.
                let h = 1e-2f32;
                for v in 0..d {
                    let mut cp = c.clone();
                    cp[v] += h;
                    let mut cm = c.clone();
                    cm[v] -= h;
                    let loss_at = |cc: &[f32]| -> f64 {
                        let b = InputBox::around(cc, eps, &dl, &dh).unwrap();
                        let bounds = propagate_frozen(&net, &b, &pattern).unwrap();
                        let wcl = worst_case_logits(bounds.last().unwrap(), y);
                        f64::from(cross_entropy(&wcl.d, y))
                    };
                    let fd = (loss_at(&cp) - loss_at(&cm)) / (2.0 * f64::from(h));
                    if fd.abs() < 0.05 {
                        // Storage noise would dominate the quotient.
                        assert!(f64::from(g[v]).abs() < 0.06, "grad {} vs tiny fd {fd}", g[v]);
                        continue;
                    }
                    let rel = (f64::from(g[v]) - fd).abs() / fd.abs();
                    assert!(rel < 1e-3, "dim {v}: grad {} vs fd {fd}", g[v]);
                    probes += 1;
                }
            }
        }
        assert!(probes >= 100, "only {probes} informative probes");
    }

    #[test]
    fn robust_grads_match_frozen_finite_differences() {
        let mut rng = Rng::seed(50);
        let mut probes = 0usize;
        for trial in 0..6u64 {
            let dims = [2usize, 5, 4, 3];
            let net = rand_net(&dims, 400 + trial);
            let (dl, dh) = unit_domain(2);
            let c = [rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)];
            let bx = InputBox::around(&c, 0.05, &dl, &dh).unwrap();
            let y = (trial % 3) as usize;
            let (_, pattern) = propagate_recorded(&net, &bx).unwrap();
            let grads = robust_loss_grads(&net, &bx, y).unwrap();

            let frozen_loss = |net: &Network| -> f64 {
                let bounds = propagate_frozen(net, &bx, &pattern).unwrap();
                let wcl = worst_case_logits(bounds.last().unwrap(), y);
                f64::from(cross_entropy(&wcl.d, y))
            };
            let h = 2e-3f32;
            for l in 0..net.layers().len() {
                for _ in 0..8 {
                    let i = rng.below(net.layers()[l].w.rows());
                    let j = rng.below(net.layers()[l].w.cols());
                    // A sign flip under perturbation changes which source
                    // form the weight reads; stay clear of zero.
                    if net.layers()[l].w.get(i, j).abs() < 8.0 * h {
                        continue;
                    }
                    let perturb = |delta: f32| -> Network {
                        let mut layers = net.layers().to_vec();
                        let lw = &layers[l].w;
                        let mut data = lw.as_slice().to_vec();
                        data[i * lw.cols() + j] += delta;
                        layers[l].w = Mat32::new(lw.rows(), lw.cols(), data).unwrap();
                        Network::new(layers).unwrap()
                    };
                    let fd = (frozen_loss(&perturb(h)) - frozen_loss(&perturb(-h)))
                        / (2.0 * f64::from(h));
                    let got = f64::from(grads.w[l].get(i, j));
                    // Below this magnitude the f32 storage noise in the
                    // frozen loss swamps the finite-difference signal.
                    if fd.abs() < 5e-3 || got.abs() < 5e-3 {
                        continue;
                    }
                    let rel = (got - fd).abs() / fd.abs();
                    assert!(rel < 1e-2, "w[{l}][{i}][{j}]: {got} vs {fd}");
                    probes += 1;
                }
            }
        }
        assert!(probes >= 40, "only {probes} informative probes");
    }

    #[test]
    fn propagate_dim_mismatch() {
        let net = rand_net(&[3, 4, 2], 1);
        let bx = InputBox::point(&[0.1, 0.2]);
        assert!(propagate(&net, &bx).is_err());
    }
}
