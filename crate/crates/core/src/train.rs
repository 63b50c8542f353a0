//! Training loops: plain cross-entropy, adversarial (PGD-perturbed
//! batches), fully verifiable (worst-case loss on every sample), and mixed
//! training that pays the verifiable price on only a few samples per batch.
//!
//! Determinism contract: given the same inputs and config, every loop
//! reproduces bit-identical weights. The batch loop itself is sequential;
//! per-sample gradient work fans out to worker threads but is reduced in a
//! fixed order (batch position), and every randomized subtask draws from a
//! seed derived from the sample's dataset index, never from thread timing.

use std::time::Instant;

use rayon::prelude::*;

use crate::analysis::{self, InputBox, RobustGrads};
use crate::attack::{self, AttackConfig, AttackKind};
use crate::data_io::Dataset;
use crate::model::{self, backward, cross_entropy, cross_entropy_grad, forward_with_tape, Grads, Network};
use crate::numerics::{derive_seed, Rng};
use crate::{Error, Result};

/// Which objective the loop minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Mean cross-entropy on clean samples.
    Regular,
    /// Mean cross-entropy on PGD-perturbed samples.
    Adversarial,
    /// Mean verifiable robust loss on every sample.
    Verifiable,
    /// `(1-α)·regular + α·robust-on-a-subsample`, with α adapted per epoch.
    Mixtrain,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Regular => "regular",
            Scheme::Adversarial => "adversarial",
            Scheme::Verifiable => "verifiable",
            Scheme::Mixtrain => "mixtrain",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Full specification of a training run. Construct with [`TrainConfig::new`]
/// and adjust fields; [`TrainConfig::validate`] is called by the loops.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub epochs: usize,
    /// Mini-batch size `m`; must satisfy `1 ≤ m ≤ dataset size`.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Base learning rate (default 0.001).
    pub lr: f32,
    /// Multiplicative decay applied every `lr_decay_every` epochs
    /// (default 0.6); `lr_decay_every = 0` disables decay.
    pub lr_decay: f32,
    pub lr_decay_every: usize,
    /// Target perturbation budget. The budget actually used in epoch `e`
    /// ramps linearly from `min(eps_start, eps)` to `eps`, reaching the
    /// target exactly at epoch `warmup_epochs`.
    pub eps: f32,
    pub eps_start: f32,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Robust-sample budget per epoch for [`Scheme::Mixtrain`]: the loop
    /// draws `k' = round(k / (n/m))` samples per batch, at least 1.
    pub k: usize,
    /// Initial mixing weight α (robust-loss share) for [`Scheme::Mixtrain`].
    pub alpha0: f32,
    /// Clean-accuracy target steering the α feedback: accuracy above it
    /// raises α by 0.05, otherwise α drops by 0.05.
    pub acc0: f32,
    /// Inner-maximization solver for [`Scheme::Adversarial`]. Only the PGD
    /// step count, step size, and restart count are read; the budget comes
    /// from the `eps` schedule above. `None` selects 40 steps of size 0.01
    /// with one random start.
    pub attack: Option<AttackConfig>,
}

impl TrainConfig {
    pub fn new(scheme: Scheme, epochs: usize, batch_size: usize, eps: f32, seed: u64) -> Self {
        TrainConfig {
            scheme,
            epochs,
            batch_size,
            optimizer: OptimizerKind::Adam,
            lr: 0.001,
            lr_decay: 0.6,
            lr_decay_every: 5,
            eps,
            eps_start: 0.01,
            warmup_epochs: 10,
            seed,
            k: 0,
            alpha0: 0.8,
            acc0: 0.9,
            attack: None,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if n == 0 {
            return fail("training dataset is empty".into());
        }
        if self.batch_size == 0 || self.batch_size > n {
            return fail(format!(
                "batch size must be in [1, {n}], got {}",
                self.batch_size
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate must be > 0, got {}", self.lr));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return fail(format!("eps must be finite and >= 0, got {}", self.eps));
        }
        if !(self.eps_start.is_finite() && self.eps_start >= 0.0) {
            return fail(format!("eps_start must be finite and >= 0, got {}", self.eps_start));
        }
        if !(self.alpha0.is_finite() && (0.0..=1.0).contains(&self.alpha0)) {
            return fail(format!("alpha0 must be in [0, 1], got {}", self.alpha0));
        }
        if !self.acc0.is_finite() {
            return fail(format!("acc0 must be finite, got {}", self.acc0));
        }
        if self.scheme == Scheme::Mixtrain && self.k == 0 {
            return fail("mixed training requires a sampling rate k >= 1".into());
        }
        if let Some(cfg) = &self.attack {
            cfg.validate()?;
            if cfg.kind == AttackKind::Interval {
                return fail(
                    "bound-guided perturbations are not supported as a training \
                     inner solver (known not to converge); use PGD"
                        .into(),
                );
            }
        }
        Ok(())
    }
}

/// Per-epoch mixing weight for [`Scheme::Mixtrain`]: starts at `alpha0`,
/// moves ±0.05 per epoch against the accuracy target, clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct MixSchedule {
    pub alpha: f32,
    pub alpha0: f32,
    pub acc0: f32,
}

impl MixSchedule {
    pub fn new(alpha0: f32, acc0: f32) -> Result<Self> {
        if !(alpha0.is_finite() && (0.0..=1.0).contains(&alpha0)) {
            return Err(Error::InvalidConfig(format!(
                "alpha0 must be in [0, 1], got {alpha0}"
            )));
        }
        if !acc0.is_finite() {
            return Err(Error::InvalidConfig(format!("acc0 must be finite, got {acc0}")));
        }
        Ok(MixSchedule {
            alpha: alpha0,
            alpha0,
            acc0,
        })
    }

    /// Feed one epoch's sampled-train accuracy; returns the new α.
    pub fn update(&mut self, acc: f32) -> f32 {
        if acc > self.acc0 {
            self.alpha += 0.05;
        } else {
            self.alpha -= 0.05;
        }
        self.alpha = self.alpha.clamp(0.0, 1.0);
        self.alpha
    }
}

/// One epoch's summary, in training order.
#[derive(Clone, Debug)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batch samples (on the perturbed
    /// batch for adversarial training).
    pub regular_loss: f32,
    /// Mean verifiable robust loss over the samples it was computed for;
    /// `None` when the epoch computed none.
    pub robust_loss: Option<f32>,
    /// Clean accuracy at epoch end: over the epoch's robust-sampled subset
    /// for mixed training, over the full training set otherwise.
    pub sampled_accuracy: f32,
    /// Mean wall-clock seconds per batch (gradient work + optimizer step).
    pub batch_time_s: f64,
    /// Mixing weight used this epoch (mixed training only).
    pub alpha: Option<f32>,
    /// Perturbation budget used this epoch (after warm-up).
    pub eps: f32,
    /// Learning rate used this epoch (after decay).
    pub lr: f32,
}

/// A finished training run.
#[derive(Debug)]
pub struct TrainRun {
    pub net: Network,
    pub reports: Vec<EpochReport>,
    /// Resolved per-batch robust sample count (mixed training only).
    pub k_prime: Option<usize>,
    /// Human-readable warnings (e.g. the sampling rate rounded to zero).
    pub notes: Vec<String>,
}

/// Budget used in epoch `e`: linear ramp from `min(eps_start, eps)` to
/// `eps` over the first `warmup_epochs` epochs, then constant. Monotone
/// nondecreasing; equals the target exactly from epoch `warmup_epochs` on.
pub fn eps_at(cfg: &TrainConfig, epoch: usize) -> f32 {
    let target = cfg.eps;
    let start = cfg.eps_start.min(target);
    if cfg.warmup_epochs == 0 || epoch >= cfg.warmup_epochs {
        target
    } else {
        start + (target - start) * (epoch as f32 / cfg.warmup_epochs as f32)
    }
}

/// Learning rate used in epoch `e` after step decay.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f32 {
    match epoch.checked_div(cfg.lr_decay_every) {
        // `lr_decay_every == 0` means the decay is disabled.
        None => cfg.lr,
        Some(q) => cfg.lr * cfg.lr_decay.powi(q as i32),
    }
}

/// Per-batch robust sample count: `round(k / (n/m))`, floored at 1 and
/// capped at the batch size. Returns the count plus any warnings.
pub(crate) fn resolve_k_prime(k: usize, n: usize, m: usize) -> (usize, Vec<String>) {
    let mut notes = Vec::new();
    let per_batch = (k as f64 / (n as f64 / m as f64)).round() as usize;
    let mut k_prime = per_batch;
    if k_prime == 0 {
        notes.push(format!(
            "sampling rate k={k} rounds to 0 samples per batch (n={n}, m={m}); using k'=1"
        ));
        k_prime = 1;
    }
    if k_prime > m {
        notes.push(format!(
            "sampling rate k={k} rounds to {k_prime} samples per batch, capped at batch size {m}"
        ));
        k_prime = m;
    }
    (k_prime, notes)
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Batch gradient accumulator. Per-sample contributions are added with an
/// explicit weight in f64, in batch-position order, so that mathematically
/// equal configurations (e.g. mixed training with α pinned at 0 vs the
/// regular loop) produce bit-identical updates.
struct BatchGrads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl BatchGrads {
    fn zeros(net: &Network) -> Self {
        let w = net
            .layers()
            .iter()
            .map(|l| vec![0.0; l.w.rows() * l.w.cols()])
            .collect();
        let b = net.layers().iter().map(|l| vec![0.0; l.b.len()]).collect();
        BatchGrads { w, b }
    }

    fn add(&mut self, w: &[crate::numerics::Mat32], b: &[Vec<f32>], weight: f64) {
        for (acc, m) in self.w.iter_mut().zip(w) {
            for (a, &g) in acc.iter_mut().zip(m.as_slice()) {
                *a += weight * g as f64;
            }
        }
        for (acc, v) in self.b.iter_mut().zip(b) {
            for (a, &g) in acc.iter_mut().zip(v) {
                *a += weight * g as f64;
            }
        }
    }
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

struct OptState {
    kind: OptimizerKind,
    t: i32,
    m_w: Vec<Vec<f32>>,
    v_w: Vec<Vec<f32>>,
    m_b: Vec<Vec<f32>>,
    v_b: Vec<Vec<f32>>,
}

impl OptState {
    fn new(net: &Network, kind: OptimizerKind) -> Self {
        let shape_w: Vec<Vec<f32>> = net
            .layers()
            .iter()
            .map(|l| vec![0.0; l.w.rows() * l.w.cols()])
            .collect();
        let shape_b: Vec<Vec<f32>> = net.layers().iter().map(|l| vec![0.0; l.b.len()]).collect();
        OptState {
            kind,
            t: 0,
            m_w: shape_w.clone(),
            v_w: shape_w.clone(),
            m_b: shape_b.clone(),
            v_b: shape_b,
        }
    }

    fn step(&mut self, net: &mut Network, g: &BatchGrads, lr: f32) {
        self.t += 1;
        let t = self.t;
        let kind = self.kind;
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            update_tensor(
                kind,
                t,
                lr,
                layer.w.as_mut_slice(),
                &g.w[li],
                &mut self.m_w[li],
                &mut self.v_w[li],
            );
            update_tensor(
                kind,
                t,
                lr,
                layer.b.as_mut_slice(),
                &g.b[li],
                &mut self.m_b[li],
                &mut self.v_b[li],
            );
        }
    }
}

fn update_tensor(
    kind: OptimizerKind,
    t: i32,
    lr: f32,
    theta: &mut [f32],
    grad: &[f64],
    m: &mut [f32],
    v: &mut [f32],
) {
    match kind {
        OptimizerKind::Sgd => {
            for (th, &g) in theta.iter_mut().zip(grad) {
                *th -= lr * g as f32;
            }
        }
        OptimizerKind::Adam => {
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            for ((th, &gd), (mi, vi)) in theta
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = gd as f32;
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *th -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Per-sample gradient work
// ---------------------------------------------------------------------------

/// Cross-entropy loss and parameter gradients for one sample.
fn ce_grads(net: &Network, x: &[f32], y: usize) -> Result<(f32, Grads)> {
    let (logits, tape) = forward_with_tape(net, x)?;
    let loss = cross_entropy(&logits, y);
    let g = backward(net, tape, &cross_entropy_grad(&logits, y))?;
    Ok((loss, g))
}

/// Cross-entropy contributions for a batch, computed in parallel, returned
/// in batch order.
fn ce_batch(net: &Network, data: &Dataset, idx: &[usize]) -> Result<Vec<(f32, Grads)>> {
    idx.par_iter()
        .map(|&gi| {
            let s = &data.samples[gi];
            ce_grads(net, s.x.as_slice(), s.y)
        })
        .collect()
}

/// Verifiable robust loss contributions for a batch, in batch order.
fn robust_batch(
    net: &Network,
    data: &Dataset,
    idx: &[usize],
    eps: f32,
    dlo: &[f32],
    dhi: &[f32],
) -> Result<Vec<RobustGrads>> {
    idx.par_iter()
        .map(|&gi| {
            let s = &data.samples[gi];
            let bx = InputBox::around(s.x.as_slice(), eps, dlo, dhi)?;
            analysis::robust_loss_grads(net, &bx, s.y)
        })
        .collect()
}

/// Clean accuracy of `net` over the given dataset indices.
fn accuracy_on(net: &Network, data: &Dataset, idx: &[usize]) -> Result<f32> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let correct: usize = idx
        .par_iter()
        .map(|&gi| {
            let s = &data.samples[gi];
            Ok(usize::from(model::predict(net, s.x.as_slice())? == s.y))
        })
        .sum::<Result<usize>>()?;
    Ok(correct as f32 / idx.len() as f32)
}

// ---------------------------------------------------------------------------
// The engine
// ---------------------------------------------------------------------------

/// Train `net` on `data` according to `cfg.scheme`. Returns the trained
/// network plus per-epoch reports; bit-deterministic given the config.
pub fn train(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate(data.len())?;
    if net.input_dim() != data.dim() {
        return Err(Error::DimMismatch {
            context: "train",
            expected: net.input_dim(),
            got: data.dim(),
        });
    }
    if data.class_count() > net.output_dim() {
        return Err(Error::InvalidConfig(format!(
            "dataset labels need {} classes but the network has {} outputs",
            data.class_count(),
            net.output_dim()
        )));
    }
    run(net, data, cfg)
}

/// [`train`] restricted to [`Scheme::Regular`].
pub fn train_regular(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    expect_scheme(cfg, Scheme::Regular)?;
    train(net, data, cfg)
}

/// [`train`] restricted to [`Scheme::Adversarial`].
pub fn train_adversarial(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    expect_scheme(cfg, Scheme::Adversarial)?;
    train(net, data, cfg)
}

/// [`train`] restricted to [`Scheme::Verifiable`].
pub fn train_verifiable(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    expect_scheme(cfg, Scheme::Verifiable)?;
    train(net, data, cfg)
}

/// [`train`] restricted to [`Scheme::Mixtrain`].
pub fn train_mixtrain(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    expect_scheme(cfg, Scheme::Mixtrain)?;
    train(net, data, cfg)
}

fn expect_scheme(cfg: &TrainConfig, want: Scheme) -> Result<()> {
    if cfg.scheme != want {
        return Err(Error::InvalidConfig(format!(
            "this entry point trains scheme '{}', config says '{}'",
            want.name(),
            cfg.scheme.name()
        )));
    }
    Ok(())
}

/// PGD solver parameters for adversarial training at the epoch's budget;
/// `None` when the budget is zero (no perturbation).
fn effective_attack(cfg: &TrainConfig, eps_now: f32) -> Result<Option<AttackConfig>> {
    if cfg.scheme != Scheme::Adversarial || eps_now == 0.0 {
        return Ok(None);
    }
    let (steps, step, restarts) = match &cfg.attack {
        Some(c) => (c.pgd_steps, c.pgd_step, c.restarts),
        None => (40, 0.01, 1),
    };
    AttackConfig::pgd(eps_now, steps, step, restarts).map(Some)
}

fn run(mut net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    let n = data.len();
    let m = cfg.batch_size;
    let (dlo, dhi) = data.norm.domain();
    let mut opt = OptState::new(&net, cfg.optimizer);
    let mut sched = MixSchedule::new(cfg.alpha0, cfg.acc0)?;
    let (k_prime, notes) = if cfg.scheme == Scheme::Mixtrain {
        resolve_k_prime(cfg.k, n, m)
    } else {
        (0, Vec::new())
    };
    let all_idx: Vec<usize> = (0..n).collect();
    let mut reports = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let eps_now = eps_at(cfg, epoch);
        let alpha = sched.alpha;
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        let mut rng = Rng::seed(epoch_seed);
        let mut order = all_idx.clone();
        rng.shuffle(&mut order);
        let atk = effective_attack(cfg, eps_now)?;

        let mut ce_loss_sum = 0.0f64;
        let mut ce_count = 0usize;
        let mut rob_loss_sum = 0.0f64;
        let mut rob_count = 0usize;
        let mut batch_secs = 0.0f64;
        let mut batches = 0usize;
        let mut sampled: Vec<usize> = Vec::new();

        // Exploding weights surface as non-finite-value errors from the
        // gradient work (inputs are finite by construction, so nothing else
        // produces them here). Report those as divergence, not as a
        // malformed-value bug.
        let diverged = |e: Error| match e {
            Error::NonFinite(_) => Error::Diverged {
                epoch,
                loss: f32::INFINITY,
            },
            other => other,
        };

        for chunk in order.chunks(m) {
            let t0 = Instant::now();
            let mut accum = BatchGrads::zeros(&net);
            let len = chunk.len() as f64;

            match cfg.scheme {
                Scheme::Regular => {
                    let contribs = ce_batch(&net, data, chunk).map_err(diverged)?;
                    let w_each = 1.0 / len;
                    for (loss, g) in &contribs {
                        ce_loss_sum += *loss as f64;
                        accum.add(&g.w, &g.b, w_each);
                    }
                    ce_count += chunk.len();
                }
                Scheme::Adversarial => {
                    let contribs: Vec<(f32, Grads)> = chunk
                        .par_iter()
                        .map(|&gi| {
                            let s = &data.samples[gi];
                            let xp = match &atk {
                                Some(c) => {
                                    let mut arng =
                                        Rng::seed(derive_seed(epoch_seed, gi as u64 + 1));
                                    attack::perturb(&net, s.x.as_slice(), s.y, c, &dlo, &dhi, &mut arng)?
                                }
                                None => s.x.as_slice().to_vec(),
                            };
                            ce_grads(&net, &xp, s.y)
                        })
                        .collect::<Result<_>>()
                        .map_err(diverged)?;
                    let w_each = 1.0 / len;
                    for (loss, g) in &contribs {
                        ce_loss_sum += *loss as f64;
                        accum.add(&g.w, &g.b, w_each);
                    }
                    ce_count += chunk.len();
                }
                Scheme::Verifiable => {
                    if eps_now == 0.0 {
                        // A zero-radius ball is the clean point: identical to
                        // the regular objective, so take the exact same path.
                        let contribs = ce_batch(&net, data, chunk).map_err(diverged)?;
                        let w_each = 1.0 / len;
                        for (loss, g) in &contribs {
                            ce_loss_sum += *loss as f64;
                            accum.add(&g.w, &g.b, w_each);
                        }
                        ce_count += chunk.len();
                    } else {
                        let contribs = robust_batch(&net, data, chunk, eps_now, &dlo, &dhi)
                            .map_err(diverged)?;
                        let w_each = 1.0 / len;
                        for rg in &contribs {
                            rob_loss_sum += rg.loss as f64;
                            accum.add(&rg.w, &rg.b, w_each);
                        }
                        rob_count += chunk.len();
                        // Clean loss for the report only; does not touch θ.
                        let clean: f64 = chunk
                            .par_iter()
                            .map(|&gi| {
                                let s = &data.samples[gi];
                                Ok(cross_entropy(&model::forward(&net, s.x.as_slice())?, s.y) as f64)
                            })
                            .sum::<Result<f64>>()
                            .map_err(diverged)?;
                        ce_loss_sum += clean;
                        ce_count += chunk.len();
                    }
                }
                Scheme::Mixtrain => {
                    let kp = k_prime.min(chunk.len());
                    let mut pos = rng.sample_indices(chunk.len(), kp);
                    pos.sort_unstable();
                    sampled.extend(pos.iter().map(|&p| chunk[p]));

                    let contribs = ce_batch(&net, data, chunk).map_err(diverged)?;
                    let w_each = (1.0 - alpha as f64) / len;
                    for (loss, g) in &contribs {
                        ce_loss_sum += *loss as f64;
                        accum.add(&g.w, &g.b, w_each);
                    }
                    ce_count += chunk.len();

                    if alpha > 0.0 {
                        let w_rob = alpha as f64 / kp as f64;
                        if eps_now == 0.0 {
                            // Zero-radius robust loss is the clean loss on the
                            // sampled points; reuse their gradients.
                            for &p in &pos {
                                let (loss, g) = &contribs[p];
                                rob_loss_sum += *loss as f64;
                                accum.add(&g.w, &g.b, w_rob);
                            }
                        } else {
                            let sel: Vec<usize> = pos.iter().map(|&p| chunk[p]).collect();
                            let rob = robust_batch(&net, data, &sel, eps_now, &dlo, &dhi)
                                .map_err(diverged)?;
                            for rg in &rob {
                                rob_loss_sum += rg.loss as f64;
                                accum.add(&rg.w, &rg.b, w_rob);
                            }
                        }
                        rob_count += kp;
                    }
                }
            }

            opt.step(&mut net, &accum, lr);
            batch_secs += t0.elapsed().as_secs_f64();
            batches += 1;
        }

        let regular_loss = (ce_loss_sum / ce_count.max(1) as f64) as f32;
        let robust_loss = (rob_count > 0).then(|| (rob_loss_sum / rob_count as f64) as f32);
        if !regular_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: regular_loss,
            });
        }
        if let Some(rl) = robust_loss {
            if !rl.is_finite() {
                return Err(Error::Diverged { epoch, loss: rl });
            }
        }

        let sampled_accuracy = if cfg.scheme == Scheme::Mixtrain {
            accuracy_on(&net, data, &sampled)?
        } else {
            accuracy_on(&net, data, &all_idx)?
        };
        if cfg.scheme == Scheme::Mixtrain {
            sched.update(sampled_accuracy);
        }

        reports.push(EpochReport {
            epoch,
            regular_loss,
            robust_loss,
            sampled_accuracy,
            batch_time_s: batch_secs / batches.max(1) as f64,
            alpha: (cfg.scheme == Scheme::Mixtrain).then_some(alpha),
            eps: eps_now,
            lr,
        });
    }

    Ok(TrainRun {
        net,
        reports,
        k_prime: (cfg.scheme == Scheme::Mixtrain).then_some(k_prime),
        notes,
    })
}

// ---------------------------------------------------------------------------
// Robust-loss distribution diagnostics
// ---------------------------------------------------------------------------

/// Verifiable robust losses on a random subsample (and optionally the full
/// dataset) — the raw material for checking how well a small sample's loss
/// distribution tracks the whole set's.
#[derive(Clone, Debug)]
pub struct LossDistribution {
    /// Losses on `k` samples drawn without replacement (dataset order).
    pub sampled: Vec<f32>,
    /// Losses on every sample, when requested.
    pub full: Option<Vec<f32>>,
}

pub fn robust_loss_distribution(
    net: &Network,
    data: &Dataset,
    k: usize,
    eps: f32,
    seed: u64,
    include_full: bool,
) -> Result<LossDistribution> {
    let n = data.len();
    if k > n {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {k} from a dataset of {n}"
        )));
    }
    let (dlo, dhi) = data.norm.domain();
    let losses_at = |idx: &[usize]| -> Result<Vec<f32>> {
        idx.par_iter()
            .map(|&gi| {
                let s = &data.samples[gi];
                let bx = InputBox::around(s.x.as_slice(), eps, &dlo, &dhi)?;
                analysis::verifiable_robust_loss(net, &bx, s.y)
            })
            .collect()
    };
    let mut idx = Rng::seed(seed).sample_indices(n, k);
    idx.sort_unstable();
    let sampled = losses_at(&idx)?;
    let full = if include_full {
        let all: Vec<usize> = (0..n).collect();
        Some(losses_at(&all)?)
    } else {
        None
    };
    Ok(LossDistribution { sampled, full })
}
