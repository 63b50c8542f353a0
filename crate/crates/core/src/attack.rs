//! Adversarial attacks: FGSM, PGD with random restarts, and a
//! bound-guided attack that follows the interval gradient of the
//! verifiable robust loss instead of the pointwise gradient.
//!
//! Every attack reports success only after re-running a concrete forward
//! pass on the candidate and re-checking the perturbation budget and the
//! input domain, so rounding inside an attack can never produce a false
//! positive. Iterates are projected onto an inwardly rounded budget box
//! after every step, which makes the final f64 budget check provable.

use crate::analysis::{interval_gradient, propagate, worst_case_logits, InputBox};
use crate::data_io::Dataset;
use crate::model::{argmax, backward, cross_entropy, cross_entropy_grad, forward, forward_with_tape, Network};
use crate::numerics::{derive_seed, Rng};
use crate::{Error, Result};
use rayon::prelude::*;

/// Which attack to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Interval,
}

/// Attack hyperparameters. Build through the constructors, which fill in
/// documented defaults and validate invariants.
#[derive(Clone, Debug)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget around the clean input.
    pub eps: f32,
    /// Gradient steps per PGD run (also the bound-guided finisher).
    pub pgd_steps: usize,
    /// PGD step size.
    pub pgd_step: f32,
    /// Extra PGD runs from uniform random starts inside the budget box.
    /// Zero means a single run starting at the clean input.
    pub restarts: usize,
    /// Outer iterations of the bound-guided attack.
    pub interval_iters: usize,
    /// Step size applied to the interval gradient.
    pub interval_step: f32,
    /// Initial probe radius of the bound-guided attack.
    pub interval_eps0: f32,
    /// Probe radius growth factor (> 1).
    pub interval_growth: f32,
}

impl AttackConfig {
    pub fn fgsm(eps: f32) -> Result<Self> {
        Self::build(AttackKind::Fgsm, eps, 1, eps, 0)
    }

    pub fn pgd(eps: f32, steps: usize, step: f32, restarts: usize) -> Result<Self> {
        Self::build(AttackKind::Pgd, eps, steps, step, restarts)
    }

    /// Bound-guided attack with the documented defaults: probe radius
    /// eps/16 growing by 2x per check, step eps/4, 20 iterations, then a
    /// 40-step PGD finisher.
    pub fn interval(eps: f32) -> Result<Self> {
        let mut cfg = Self::build(AttackKind::Interval, eps, 40, eps / 10.0, 0)?;
        cfg.interval_iters = 20;
        cfg.interval_step = eps / 4.0;
        cfg.interval_eps0 = eps / 16.0;
        cfg.interval_growth = 2.0;
        Ok(cfg)
    }

    fn build(kind: AttackKind, eps: f32, steps: usize, step: f32, restarts: usize) -> Result<Self> {
        let cfg = Self {
            kind,
            eps,
            pgd_steps: steps,
            pgd_step: step,
            restarts,
            interval_iters: 20,
            interval_step: eps / 4.0,
            interval_eps0: eps / 16.0,
            interval_growth: 2.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        // NaN fails every `positive` check and is rejected alongside 0 and negatives.
        let positive = |v: f32| v.is_finite() && v > 0.0;
        if !positive(self.eps) {
            return Err(Error::InvalidConfig(format!("attack eps must be > 0, got {}", self.eps)));
        }
        if !positive(self.pgd_step) || !positive(self.interval_step) || !positive(self.interval_eps0) {
            return Err(Error::InvalidConfig("attack step sizes must be > 0".into()));
        }
        if !(self.interval_growth.is_finite() && self.interval_growth > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "probe growth factor must be > 1, got {}",
                self.interval_growth
            )));
        }
        Ok(())
    }
}

/// Result of one attack on one input.
#[derive(Clone, Debug)]
pub struct AttackOutcome {
    /// True only if `x_adv` was concretely re-verified as a violation.
    pub success: bool,
    /// The confirmed adversarial input, present only on success.
    pub x_adv: Option<Vec<f32>>,
    /// Cross-entropy achieved by the best iterate found.
    pub loss: f32,
    /// Total gradient steps consumed.
    pub iterations: usize,
}

/// Sign with a dead zero: flat coordinates stay put.
#[inline]
fn sgn(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn project(x: &mut [f32], inner: &InputBox) {
    for (v, (l, h)) in x.iter_mut().zip(inner.lo().iter().zip(inner.hi())) {
        *v = v.clamp(*l, *h);
    }
}

/// The clean input plus the perturbation budget it must stay within:
/// everything needed to decide whether a candidate is a genuine violation.
pub(crate) struct Budget<'a> {
    pub(crate) x: &'a [f32],
    pub(crate) y: usize,
    pub(crate) eps: f32,
    pub(crate) dlo: &'a [f32],
    pub(crate) dhi: &'a [f32],
}

/// Concrete violation check: misclassified, inside the budget in exact
/// arithmetic, and inside the domain. Returns the confirmed loss.
pub(crate) fn confirm(net: &Network, b: &Budget, cand: &[f32]) -> Result<Option<f32>> {
    let logits = forward(net, cand)?;
    if argmax(&logits) == b.y {
        return Ok(None);
    }
    for ((c, o), (l, h)) in cand.iter().zip(b.x).zip(b.dlo.iter().zip(b.dhi)) {
        if (f64::from(*c) - f64::from(*o)).abs() > f64::from(b.eps) || c < l || c > h {
            return Ok(None);
        }
    }
    Ok(Some(cross_entropy(&logits, b.y)))
}

fn grad_x(net: &Network, x: &[f32], y: usize) -> Result<(Vec<f32>, f32)> {
    let (logits, tape) = forward_with_tape(net, x)?;
    let loss = cross_entropy(&logits, y);
    let g = backward(net, tape, &cross_entropy_grad(&logits, y))?;
    Ok((g.x, loss))
}

/// One-step sign-gradient attack: `x' = clamp(x + eps * sign(grad_x L))`.
pub fn fgsm(net: &Network, x: &[f32], y: usize, eps: f32, dlo: &[f32], dhi: &[f32]) -> Result<AttackOutcome> {
    let inner = InputBox::around_inner(x, eps, dlo, dhi)?;
    let (g, _) = grad_x(net, x, y)?;
    let mut cand: Vec<f32> = x.iter().zip(&g).map(|(xi, gi)| xi + eps * sgn(*gi)).collect();
    project(&mut cand, &inner);
    finish(net, &Budget { x, y, eps, dlo, dhi }, cand, 1)
}

fn finish(net: &Network, b: &Budget, cand: Vec<f32>, iterations: usize) -> Result<AttackOutcome> {
    match confirm(net, b, &cand)? {
        Some(loss) => Ok(AttackOutcome { success: true, x_adv: Some(cand), loss, iterations }),
        None => {
            let loss = cross_entropy(&forward(net, &cand)?, b.y);
            Ok(AttackOutcome { success: false, x_adv: None, loss, iterations })
        }
    }
}

/// What one PGD trajectory found.
pub(crate) struct PgdTrace {
    /// Highest-loss misclassified iterate, if any iterate misclassified.
    pub(crate) violation: Option<Vec<f32>>,
    /// Highest-loss iterate overall.
    pub(crate) best: Vec<f32>,
    pub(crate) best_loss: f32,
    pub(crate) steps_taken: usize,
}

/// One PGD trajectory from `start`, staying inside `inner`.
pub(crate) fn pgd_run(
    net: &Network,
    y: usize,
    start: Vec<f32>,
    steps: usize,
    step: f32,
    inner: &InputBox,
) -> Result<PgdTrace> {
    let mut cur = start;
    project(&mut cur, inner);
    let mut best = cur.clone();
    let mut best_loss = f32::NEG_INFINITY;
    let mut violation: Option<(Vec<f32>, f32)> = None;
    let mut taken = 0usize;
    for it in 0..=steps {
        let (logits, tape) = forward_with_tape(net, &cur)?;
        let loss = cross_entropy(&logits, y);
        if loss > best_loss {
            best_loss = loss;
            best = cur.clone();
        }
        if argmax(&logits) != y && violation.as_ref().is_none_or(|(_, l)| loss > *l) {
            violation = Some((cur.clone(), loss));
        }
        if it == steps {
            break;
        }
        let g = backward(net, tape, &cross_entropy_grad(&logits, y))?;
        for (v, gi) in cur.iter_mut().zip(&g.x) {
            *v += step * sgn(*gi);
        }
        project(&mut cur, inner);
        taken += 1;
    }
    Ok(PgdTrace {
        violation: violation.map(|(v, _)| v),
        best,
        best_loss,
        steps_taken: taken,
    })
}

/// Projected sign-gradient ascent on the cross-entropy, with uniform
/// random starts inside the budget box. `restarts == 0` runs once from the
/// clean input; otherwise every run starts from a fresh random point.
/// Returns on the first confirmed violation.
pub fn pgd(
    net: &Network,
    x: &[f32],
    y: usize,
    cfg: &AttackConfig,
    dlo: &[f32],
    dhi: &[f32],
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let inner = InputBox::around_inner(x, cfg.eps, dlo, dhi)?;
    let budget = Budget { x, y, eps: cfg.eps, dlo, dhi };
    let runs = cfg.restarts.max(1);
    let mut best_cand: Option<Vec<f32>> = None;
    let mut best_loss = f32::NEG_INFINITY;
    let mut total_steps = 0usize;
    for _ in 0..runs {
        let start = if cfg.restarts == 0 {
            x.to_vec()
        } else {
            (0..x.len())
                .map(|i| rng.uniform(inner.lo()[i], inner.hi()[i]))
                .collect()
        };
        let trace = pgd_run(net, y, start, cfg.pgd_steps, cfg.pgd_step, &inner)?;
        total_steps += trace.steps_taken;
        if let Some(v) = trace.violation {
            return finish(net, &budget, v, total_steps);
        }
        if trace.best_loss > best_loss {
            best_loss = trace.best_loss;
            best_cand = Some(trace.best);
        }
    }
    finish(net, &budget, best_cand.expect("at least one run"), total_steps)
}

/// PGD perturbation for adversarial training.
///
/// Runs the configured trajectories and returns the highest-loss iterate
/// seen, whether or not it crosses the decision boundary; training wants
/// the strongest point in the budget box, not a success verdict.
pub fn perturb(
    net: &Network,
    x: &[f32],
    y: usize,
    cfg: &AttackConfig,
    dlo: &[f32],
    dhi: &[f32],
    rng: &mut Rng,
) -> Result<Vec<f32>> {
    cfg.validate()?;
    let inner = InputBox::around_inner(x, cfg.eps, dlo, dhi)?;
    let runs = cfg.restarts.max(1);
    let mut best_point = x.to_vec();
    let mut best_loss = f32::NEG_INFINITY;
    for _ in 0..runs {
        let start = if cfg.restarts == 0 {
            x.to_vec()
        } else {
            (0..x.len())
                .map(|i| rng.uniform(inner.lo()[i], inner.hi()[i]))
                .collect()
        };
        let trace = pgd_run(net, y, start, cfg.pgd_steps, cfg.pgd_step, &inner)?;
        if trace.best_loss > best_loss {
            best_loss = trace.best_loss;
            best_point = trace.best;
        }
    }
    Ok(best_point)
}

/// Bound-guided attack.
///
/// Each iteration first checks the current iterate concretely. It then
/// probes for the smallest region around the iterate whose worst-case
/// bounds already admit a misclassification, growing the probe radius by
/// the configured factor and capping it at half the budget. The iterate
/// moves along the interval gradient of that region (the *grown* radius is
/// used for the gradient region) and is clipped back to the budget box of
/// the ORIGINAL input intersected with the domain. After the configured
/// iterations, a PGD finisher starts from the reached point, still
/// projected around the original input with the full budget.
pub fn interval_attack(
    net: &Network,
    x: &[f32],
    y: usize,
    cfg: &AttackConfig,
    dlo: &[f32],
    dhi: &[f32],
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let inner = InputBox::around_inner(x, cfg.eps, dlo, dhi)?;
    let budget = Budget { x, y, eps: cfg.eps, dlo, dhi };
    let mut cur = x.to_vec();
    project(&mut cur, &inner);
    let mut steps = 0usize;
    for _ in 0..cfg.interval_iters {
        if let Some(loss) = confirm(net, &budget, &cur)? {
            return Ok(AttackOutcome { success: true, x_adv: Some(cur), loss, iterations: steps });
        }
        // Find the smallest probe radius whose bounds admit a violation.
        let mut radius = cfg.interval_eps0;
        let region = loop {
            let bx = InputBox::around(&cur, radius, dlo, dhi)?;
            let bounds = propagate(net, &bx)?;
            let wcl = worst_case_logits(bounds.last().unwrap(), y);
            if !wcl.verified() || radius >= cfg.eps / 2.0 {
                break bx;
            }
            radius *= cfg.interval_growth;
        };
        let g = interval_gradient(net, &region, y)?;
        for (v, gi) in cur.iter_mut().zip(&g) {
            *v += cfg.interval_step * gi;
        }
        project(&mut cur, &inner);
        steps += 1;
    }
    // PGD finisher from the reached point, full budget around the original.
    let trace = pgd_run(net, y, cur, cfg.pgd_steps, cfg.pgd_step, &inner)?;
    steps += trace.steps_taken;
    match trace.violation {
        Some(v) => finish(net, &budget, v, steps),
        None => finish(net, &budget, trace.best, steps),
    }
}

/// Dispatch one attack by config kind. FGSM and the bound-guided attack
/// ignore the rng.
pub fn run_attack(
    net: &Network,
    x: &[f32],
    y: usize,
    cfg: &AttackConfig,
    dlo: &[f32],
    dhi: &[f32],
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(net, x, y, cfg.eps, dlo, dhi),
        AttackKind::Pgd => pgd(net, x, y, cfg, dlo, dhi, rng),
        AttackKind::Interval => interval_attack(net, x, y, cfg, dlo, dhi),
    }
}

/// Fraction of dataset samples with confirmed violations. Samples are
/// attacked in parallel; each sample's rng is derived from `seed` and its
/// index, so the result is independent of thread scheduling.
pub fn attack_success_rate(
    net: &Network,
    data: &Dataset,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<f32> {
    if data.samples.is_empty() {
        return Err(Error::InvalidConfig("attack_success_rate needs a nonempty dataset".into()));
    }
    let (dlo, dhi) = data.norm.domain();
    let hits = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = Rng::seed(derive_seed(seed, i as u64));
            run_attack(net, s.x.as_slice(), s.y, cfg, &dlo, &dhi, &mut rng)
                .map(|o| usize::from(o.success))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f32 / data.samples.len() as f32)
}
