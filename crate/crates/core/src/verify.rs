//! Per-input robustness verification by input bisection, plus
//! dataset-level accuracy metrics.
//!
//! [`verify_input`] decides whether a network keeps its prediction on the
//! whole L-infinity ball around one input. A sub-box is *certified* when
//! the sound bound propagation of [`crate::analysis`] already proves the
//! true label wins on it; otherwise the box's most adversarial corner is
//! polished by a short projected ascent and checked concretely, and if
//! that fails too the box is bisected along the dimension with the
//! largest width-times-gradient product. The input is verified only when
//! every leaf of the bisection tree is certified.
//!
//! Three one-sided guarantees follow from that structure:
//!
//! * `verified` is sound: the bounds only ever over-approximate, so a
//!   verified input has no adversarial example within the budget.
//! * `counterexample` is concrete: the witness has been run through the
//!   real forward pass and misclassifies while satisfying the budget in
//!   exact arithmetic.
//! * everything the search cannot settle before its depth cap or time
//!   budget is `undecided` — never an error, and never counted as
//!   verified.
//!
//! [`parallel_verify`] runs the same search on a worker pool that shares
//! bisection nodes through a lock-protected global deque: a worker keeps
//! its own stack of pending nodes and donates the older (shallower,
//! therefore larger) half whenever the shared deque runs dry, so one
//! stubborn deep subtree ends up spread across idle workers instead of
//! serializing the run. Verdicts and per-input node counts do not depend
//! on the worker count or on thread scheduling as long as no input hits
//! its time budget; timings always vary.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::analysis::{interval_gradient_from, propagate, worst_case_logits, InputBox, SymbolicBounds};
use crate::attack::{confirm, pgd_run, run_attack, AttackConfig, Budget};
use crate::model::{predict, Network, Sample};
use crate::numerics::{derive_seed, Rng};
use crate::{Error, Result};

/// Gradient steps of the in-box polish applied to a candidate corner
/// before it is checked concretely.
const POLISH_STEPS: usize = 8;

/// What to verify and how hard to try.
#[derive(Clone, Debug)]
pub struct RobustnessSpec {
    /// L-infinity radius around each input.
    pub eps: f32,
    /// Lower clamp of the valid input domain, one entry per feature.
    pub domain_lo: Vec<f32>,
    /// Upper clamp of the valid input domain.
    pub domain_hi: Vec<f32>,
    /// Maximum bisection depth; leaves at this depth that are neither
    /// certified nor refuted make the input `undecided`.
    pub max_depth: usize,
    /// Node-processing time budget per input. Crossing it stops the
    /// search with an `undecided` verdict; it is never an error.
    pub timeout: Duration,
    /// Worker threads for [`parallel_verify`].
    pub workers: usize,
}

impl RobustnessSpec {
    /// Spec with the documented defaults: depth cap 20, ten seconds per
    /// input, one worker.
    pub fn new(eps: f32, domain_lo: Vec<f32>, domain_hi: Vec<f32>) -> Result<Self> {
        let spec = Self {
            eps,
            domain_lo,
            domain_hi,
            max_depth: 20,
            timeout: Duration::from_secs(10),
            workers: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be >= 0, got {}", self.eps)));
        }
        if self.domain_lo.len() != self.domain_hi.len() {
            return Err(Error::DimMismatch {
                context: "RobustnessSpec domain",
                expected: self.domain_lo.len(),
                got: self.domain_hi.len(),
            });
        }
        for (l, h) in self.domain_lo.iter().zip(&self.domain_hi) {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::InvalidConfig(format!("bad domain dim [{l}, {h}]")));
            }
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        Ok(())
    }

    fn check_input(&self, net: &Network, x: &[f32], y: usize) -> Result<()> {
        if x.len() != self.domain_lo.len() {
            return Err(Error::DimMismatch {
                context: "verify input",
                expected: self.domain_lo.len(),
                got: x.len(),
            });
        }
        if x.len() != net.input_dim() {
            return Err(Error::DimMismatch {
                context: "verify input",
                expected: net.input_dim(),
                got: x.len(),
            });
        }
        if y >= net.output_dim() {
            return Err(Error::InvalidConfig(format!(
                "label {y} out of range for {} classes",
                net.output_dim()
            )));
        }
        Ok(())
    }
}

/// Outcome of verifying one input.
#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    /// Every point in the ball provably keeps the true label.
    Verified,
    /// A concrete in-budget misclassified point (already re-confirmed
    /// through the real forward pass).
    Counterexample(Vec<f32>),
    /// The search hit its depth cap or time budget first. Counts as not
    /// verified everywhere.
    Undecided,
    /// The clean input itself is misclassified, so there is nothing to
    /// verify; recorded instead of attacked.
    Misclassified,
}

impl Verdict {
    /// Stable lowercase name used in CSV reports.
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Verified => "verified",
            Verdict::Counterexample(_) => "counterexample",
            Verdict::Undecided => "undecided",
            Verdict::Misclassified => "misclassified",
        }
    }

    pub fn is_verified(&self) -> bool {
        matches!(self, Verdict::Verified)
    }
}

/// One node of the bisection tree: a sub-box of the input ball and where
/// it came from.
#[derive(Clone, Debug)]
pub struct BisectionNode {
    pub bx: InputBox,
    /// Root is depth 0; children are one deeper than their parent.
    pub depth: usize,
    /// Creation-order id within this input's tree (root is 0).
    pub id: usize,
    /// Id of the node whose split produced this one; the root points to
    /// itself.
    pub parent: usize,
}

/// Per-input verification record.
#[derive(Clone, Debug, PartialEq)]
pub struct InputReport {
    /// Position in the dataset (0 for a standalone [`verify_input`] call).
    pub index: usize,
    pub verdict: Verdict,
    /// Bisection nodes processed.
    pub nodes: usize,
    /// Node-processing time attributed to this input, in milliseconds.
    pub millis: u64,
}

/// Dataset-level verification result.
#[derive(Clone, Debug)]
pub struct VerdictReport {
    /// One record per sample, in dataset order.
    pub inputs: Vec<InputReport>,
    /// Fraction of samples classified correctly.
    pub acc: f32,
    /// Fraction classified correctly and not broken by the evaluation
    /// attack. Filled by [`metrics`]; plain verification leaves it empty.
    pub era: Option<f32>,
    /// Fraction classified correctly and verified.
    pub vra: f32,
    /// Nodes processed by each pool worker. Diagnostic: together with the
    /// millis fields this is the only scheduling-dependent output.
    pub nodes_by_worker: Vec<usize>,
}

/// The three headline numbers of a robustness evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub acc: f32,
    pub era: f32,
    pub vra: f32,
}

/// What processing one node concluded.
enum NodeOutcome {
    /// Bound propagation certified the whole sub-box.
    Certified,
    /// A concretely confirmed violation.
    Violation(Vec<f32>),
    /// Neither certified nor refuted, and the box cannot be split
    /// further (depth cap or degenerate width).
    Exhausted,
    /// The sub-box halves to search next.
    Split(InputBox, InputBox),
}

/// Pick the dimension to bisect: the one with the largest smear, width
/// times the magnitude of the loss gradient component, ties going to the
/// lowest index. A degenerate (all-zero) smear falls back to the widest
/// dimension.
pub fn choose_split(out: &SymbolicBounds, bx: &InputBox, y: usize) -> usize {
    let g = interval_gradient_from(out, bx.dim(), y);
    let mut best = 0usize;
    let mut best_smear = f64::NEG_INFINITY;
    for (i, gi) in g.iter().enumerate() {
        let smear = f64::from(bx.width(i)) * f64::from(gi.abs());
        if smear > best_smear {
            best_smear = smear;
            best = i;
        }
    }
    if best_smear > 0.0 {
        return best;
    }
    let mut widest = 0usize;
    for i in 1..bx.dim() {
        if bx.width(i) > bx.width(widest) {
            widest = i;
        }
    }
    widest
}

/// Certify, refute, or split one sub-box.
fn process_node(
    net: &Network,
    budget: &Budget,
    spec: &RobustnessSpec,
    node: &BisectionNode,
) -> Result<NodeOutcome> {
    let bounds = propagate(net, &node.bx)?;
    let out = bounds.last().expect("propagate returns one entry per layer");
    if worst_case_logits(out, budget.y).verified() {
        return Ok(NodeOutcome::Certified);
    }
    // Hunt a concrete violation before splitting: start at the corner the
    // loss gradient points to, polish with a short projected ascent that
    // stays inside this sub-box, then check the best misclassified
    // iterate against the exact budget.
    let g = interval_gradient_from(out, node.bx.dim(), budget.y);
    let corner: Vec<f32> = g
        .iter()
        .zip(node.bx.lo().iter().zip(node.bx.hi()))
        .map(|(gi, (l, h))| if *gi > 0.0 { *h } else { *l })
        .collect();
    let max_w = (0..node.bx.dim()).map(|i| node.bx.width(i)).fold(0.0f32, f32::max);
    let trace = pgd_run(net, budget.y, corner, POLISH_STEPS, 0.25 * max_w, &node.bx)?;
    if let Some(v) = trace.violation {
        if confirm(net, budget, &v)?.is_some() {
            return Ok(NodeOutcome::Violation(v));
        }
    }
    if node.depth >= spec.max_depth {
        return Ok(NodeOutcome::Exhausted);
    }
    let dim = choose_split(out, &node.bx, budget.y);
    match node.bx.split(dim) {
        Some((a, b)) => Ok(NodeOutcome::Split(a, b)),
        None => Ok(NodeOutcome::Exhausted),
    }
}

/// Decide robustness of one input sequentially.
///
/// The whole bounded tree is explored (a found counterexample stops
/// descent into its own sub-box but not the remaining work), so the node
/// count is a deterministic function of the problem. Only the time budget
/// cuts exploration short.
pub fn verify_input(net: &Network, x: &[f32], y: usize, spec: &RobustnessSpec) -> Result<InputReport> {
    spec.validate()?;
    spec.check_input(net, x, y)?;
    if predict(net, x)? != y {
        return Ok(InputReport { index: 0, verdict: Verdict::Misclassified, nodes: 0, millis: 0 });
    }
    if spec.eps == 0.0 {
        // A zero-radius ball is exactly the clean point, already checked.
        return Ok(InputReport { index: 0, verdict: Verdict::Verified, nodes: 0, millis: 0 });
    }
    let budget = Budget { x, y, eps: spec.eps, dlo: &spec.domain_lo, dhi: &spec.domain_hi };
    let root = InputBox::around(x, spec.eps, &spec.domain_lo, &spec.domain_hi)?;
    let mut stack = vec![BisectionNode { bx: root, depth: 0, id: 0, parent: 0 }];
    let mut created = 1usize;
    let mut nodes = 0usize;
    let mut consumed = Duration::ZERO;
    let mut exhausted = false;
    let mut timed_out = false;
    let mut witness: Option<Vec<f32>> = None;
    while let Some(node) = stack.pop() {
        if consumed >= spec.timeout {
            timed_out = true;
            break;
        }
        let t = Instant::now();
        let outcome = process_node(net, &budget, spec, &node)?;
        consumed += t.elapsed();
        nodes += 1;
        match outcome {
            NodeOutcome::Certified => {}
            NodeOutcome::Violation(v) => {
                if witness.is_none() {
                    witness = Some(v);
                }
            }
            NodeOutcome::Exhausted => exhausted = true,
            NodeOutcome::Split(a, b) => {
                stack.push(BisectionNode { bx: b, depth: node.depth + 1, id: created + 1, parent: node.id });
                stack.push(BisectionNode { bx: a, depth: node.depth + 1, id: created, parent: node.id });
                created += 2;
            }
        }
    }
    let verdict = match witness {
        Some(v) => Verdict::Counterexample(v),
        None if exhausted || timed_out => Verdict::Undecided,
        None => Verdict::Verified,
    };
    Ok(InputReport { index: 0, verdict, nodes, millis: consumed.as_millis() as u64 })
}

/// A bisection node tagged with the dataset position it belongs to.
struct WorkItem {
    input: usize,
    node: BisectionNode,
}

/// Mutable verification state of one input, updated under the pool lock.
struct InputState {
    /// Nodes created but not yet resolved (processed or drained).
    outstanding: usize,
    /// Node ids handed out so far.
    created: usize,
    nodes: usize,
    consumed: Duration,
    exhausted: bool,
    timed_out: bool,
    /// Set when the time budget is spent: remaining nodes drain unprocessed.
    cancelled: bool,
    witness: Option<Vec<f32>>,
    /// Trivial verdicts decided before any search (misclassified, eps 0).
    verdict: Option<Verdict>,
}

impl InputState {
    fn fresh() -> Self {
        Self {
            outstanding: 0,
            created: 0,
            nodes: 0,
            consumed: Duration::ZERO,
            exhausted: false,
            timed_out: false,
            cancelled: false,
            witness: None,
            verdict: None,
        }
    }
}

/// Everything the workers share, behind one mutex.
struct Pool {
    queue: VecDeque<WorkItem>,
    states: Vec<InputState>,
    /// Unresolved nodes across all inputs; zero means the run is done.
    outstanding_total: usize,
    /// A worker failed; everyone abandons ship.
    failed: bool,
}

/// Mark one node of `input` resolved; wake everyone when the run drains.
fn resolve_node(p: &mut Pool, input: usize, cv: &Condvar) {
    p.states[input].outstanding -= 1;
    p.outstanding_total -= 1;
    if p.outstanding_total == 0 {
        cv.notify_all();
    }
}

fn worker_loop(
    net: &Network,
    samples: &[Sample],
    spec: &RobustnessSpec,
    mx: &Mutex<Pool>,
    cv: &Condvar,
) -> Result<usize> {
    let mut processed = 0usize;
    let mut local: Vec<WorkItem> = Vec::new();
    loop {
        let item = if let Some(it) = local.pop() {
            it
        } else {
            let mut p = mx.lock().expect("pool lock");
            loop {
                if p.failed {
                    return Ok(processed);
                }
                if let Some(it) = p.queue.pop_back() {
                    break it;
                }
                if p.outstanding_total == 0 {
                    return Ok(processed);
                }
                p = cv.wait(p).expect("pool lock");
            }
        };
        // Inputs that spent their time budget drain without further work.
        {
            let mut p = mx.lock().expect("pool lock");
            if p.failed {
                return Ok(processed);
            }
            let st = &mut p.states[item.input];
            if st.cancelled || st.consumed >= spec.timeout {
                if !st.cancelled {
                    st.cancelled = true;
                    // This node was cut off unexplored.
                    st.timed_out = true;
                }
                resolve_node(&mut p, item.input, cv);
                continue;
            }
        }
        let t = Instant::now();
        let outcome = match process_node(net, &budget_of(samples, item.input, spec), spec, &item.node) {
            Ok(o) => o,
            Err(e) => {
                let mut p = mx.lock().expect("pool lock");
                p.failed = true;
                cv.notify_all();
                return Err(e);
            }
        };
        let dt = t.elapsed();
        processed += 1;
        let mut p = mx.lock().expect("pool lock");
        let st = &mut p.states[item.input];
        st.consumed += dt;
        st.nodes += 1;
        match outcome {
            NodeOutcome::Certified => {}
            NodeOutcome::Violation(v) => {
                if st.witness.is_none() {
                    st.witness = Some(v);
                }
            }
            NodeOutcome::Exhausted => st.exhausted = true,
            NodeOutcome::Split(a, b) => {
                let (ia, ib) = (st.created, st.created + 1);
                st.created += 2;
                st.outstanding += 2;
                p.outstanding_total += 2;
                let depth = item.node.depth + 1;
                local.push(WorkItem {
                    input: item.input,
                    node: BisectionNode { bx: b, depth, id: ib, parent: item.node.id },
                });
                local.push(WorkItem {
                    input: item.input,
                    node: BisectionNode { bx: a, depth, id: ia, parent: item.node.id },
                });
            }
        }
        resolve_node(&mut p, item.input, cv);
        let st = &mut p.states[item.input];
        if !st.cancelled && st.consumed >= spec.timeout {
            st.cancelled = true;
            if st.outstanding > 0 {
                // Unresolved work remains that will now drain unexplored.
                st.timed_out = true;
            }
        }
        // Donate the older (shallower) half of the private stack whenever
        // the shared deque runs dry, so idle workers can steal subtrees.
        if p.queue.is_empty() && local.len() > 1 {
            let take = local.len() / 2;
            for it in local.drain(..take) {
                p.queue.push_back(it);
            }
            cv.notify_all();
        }
    }
}

fn budget_of<'a>(samples: &'a [Sample], i: usize, spec: &'a RobustnessSpec) -> Budget<'a> {
    Budget {
        x: samples[i].x.as_slice(),
        y: samples[i].y,
        eps: spec.eps,
        dlo: &spec.domain_lo,
        dhi: &spec.domain_hi,
    }
}

/// Verify every sample with a pool of `spec.workers` threads sharing one
/// bisection-node deque.
///
/// Verdicts and node counts equal a sequential [`verify_input`] run per
/// sample whenever no input hits its time budget, independent of worker
/// count and scheduling; only the reported millis vary.
pub fn parallel_verify(net: &Network, samples: &[Sample], spec: &RobustnessSpec) -> Result<VerdictReport> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("parallel_verify needs a nonempty dataset".into()));
    }
    let mut states: Vec<InputState> = Vec::with_capacity(samples.len());
    let mut queue = VecDeque::new();
    for (i, s) in samples.iter().enumerate() {
        let x = s.x.as_slice();
        spec.check_input(net, x, s.y)?;
        let mut st = InputState::fresh();
        if predict(net, x)? != s.y {
            st.verdict = Some(Verdict::Misclassified);
        } else if spec.eps == 0.0 {
            st.verdict = Some(Verdict::Verified);
        } else {
            let root = InputBox::around(x, spec.eps, &spec.domain_lo, &spec.domain_hi)?;
            queue.push_back(WorkItem {
                input: i,
                node: BisectionNode { bx: root, depth: 0, id: 0, parent: 0 },
            });
            st.outstanding = 1;
            st.created = 1;
        }
        states.push(st);
    }
    let outstanding_total = queue.len();
    let pool = Mutex::new(Pool { queue, states, outstanding_total, failed: false });
    let cv = Condvar::new();
    let nodes_by_worker = std::thread::scope(|scope| -> Result<Vec<usize>> {
        let handles: Vec<_> = (0..spec.workers)
            .map(|_| scope.spawn(|| worker_loop(net, samples, spec, &pool, &cv)))
            .collect();
        let mut counts = Vec::with_capacity(spec.workers);
        let mut first_err = None;
        for h in handles {
            match h.join().expect("verification worker panicked") {
                Ok(c) => counts.push(c),
                Err(e) => {
                    first_err.get_or_insert(e);
                    counts.push(0);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(counts),
        }
    })?;
    let pool = pool.into_inner().expect("pool lock");
    let n = samples.len();
    let mut inputs = Vec::with_capacity(n);
    let (mut correct, mut verified) = (0usize, 0usize);
    for (i, st) in pool.states.into_iter().enumerate() {
        let verdict = match st.verdict {
            Some(v) => v,
            None => match st.witness {
                Some(w) => Verdict::Counterexample(w),
                None if st.exhausted || st.timed_out => Verdict::Undecided,
                None => Verdict::Verified,
            },
        };
        if verdict != Verdict::Misclassified {
            correct += 1;
        }
        if verdict.is_verified() {
            verified += 1;
        }
        inputs.push(InputReport {
            index: i,
            verdict,
            nodes: st.nodes,
            millis: st.consumed.as_millis() as u64,
        });
    }
    Ok(VerdictReport {
        inputs,
        acc: correct as f32 / n as f32,
        era: None,
        vra: verified as f32 / n as f32,
        nodes_by_worker,
    })
}

/// Clean accuracy, empirical robust accuracy, and verified robust
/// accuracy of one network on one dataset.
///
/// ERA counts a sample when it is classified correctly and the evaluation
/// attack fails to break it; `attack_cfg` defaults to 40-step PGD with
/// three random restarts at the verification radius. Every sample's
/// attack rng is derived from `seed` and its index, so the result does
/// not depend on thread scheduling.
pub fn metrics(
    net: &Network,
    samples: &[Sample],
    spec: &RobustnessSpec,
    attack_cfg: Option<&AttackConfig>,
    seed: u64,
) -> Result<(Metrics, VerdictReport)> {
    let mut report = parallel_verify(net, samples, spec)?;
    let era = if spec.eps == 0.0 {
        // A zero-radius attack cannot move the input at all.
        report.acc
    } else {
        let default_cfg;
        let cfg = match attack_cfg {
            Some(c) => c,
            None => {
                default_cfg = AttackConfig::pgd(spec.eps, 40, spec.eps / 8.0, 3)?;
                &default_cfg
            }
        };
        let unbroken = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| -> Result<usize> {
                if report.inputs[i].verdict == Verdict::Misclassified {
                    return Ok(0);
                }
                let mut rng = Rng::seed(derive_seed(seed, i as u64));
                let out = run_attack(net, s.x.as_slice(), s.y, cfg, &spec.domain_lo, &spec.domain_hi, &mut rng)?;
                Ok(usize::from(!out.success))
            })
            .try_reduce(|| 0usize, |a, b| Ok(a + b))?;
        unbroken as f32 / samples.len() as f32
    };
    report.era = Some(era);
    Ok((Metrics { acc: report.acc, era, vra: report.vra }, report))
}

/// Write the per-input records as CSV: `index,verdict,nodes,millis`.
pub fn write_report_csv<W: std::io::Write>(report: &VerdictReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "index,verdict,nodes,millis")?;
    for r in &report.inputs {
        writeln!(w, "{},{},{},{}", r.index, r.verdict.label(), r.nodes, r.millis)?;
    }
    Ok(())
}

/// One-line summary of the aggregate rates, in percent.
pub fn summary_line(report: &VerdictReport) -> String {
    let pct = |v: f32| format!("{:.2}", 100.0 * v);
    let era = match report.era {
        Some(e) => pct(e),
        None => "na".into(),
    };
    format!("ACC={},ERA={},VRA={}", pct(report.acc), era, pct(report.vra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{argmax, forward, Layer, Network};
    use crate::numerics::{Mat32, Vec32};

    fn linear_net(rows: Vec<Vec<f32>>, b: Vec<f32>) -> Network {
        let (k, d) = (rows.len(), rows[0].len());
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        Network::new(vec![Layer {
            w: Mat32::new(k, d, flat).unwrap(),
            b: Vec32::new(b).unwrap(),
        }])
        .unwrap()
    }

    fn spec2(eps: f32) -> RobustnessSpec {
        RobustnessSpec::new(eps, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    fn sample(x: Vec<f32>, y: usize) -> Sample {
        Sample { x: Vec32::new(x).unwrap(), y }
    }

    // Smear rule on a one-dimensional box: only one choice exists.
    #[test]
    fn choose_split_single_dimension() {
        let net = linear_net(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]);
        let bx = InputBox::from_bounds(vec![0.0], vec![1.0]).unwrap();
        let out = propagate(&net, &bx).unwrap();
        assert_eq!(choose_split(out.last().unwrap(), &bx, 0), 0);
    }

    // Gradient (0, 5) on a symmetric box: the second dimension has all
    // the smear.
    #[test]
    fn choose_split_follows_the_gradient() {
        let net = linear_net(vec![vec![0.0, 0.0], vec![0.0, 5.0]], vec![0.0, 0.0]);
        let bx = InputBox::from_bounds(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let out = propagate(&net, &bx).unwrap();
        assert_eq!(choose_split(out.last().unwrap(), &bx, 0), 1);
    }

    // Equal smear everywhere: lowest index wins.
    #[test]
    fn choose_split_breaks_ties_low() {
        let net = linear_net(vec![vec![0.0, 0.0], vec![3.0, 3.0]], vec![0.0, 0.0]);
        let bx = InputBox::from_bounds(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let out = propagate(&net, &bx).unwrap();
        assert_eq!(choose_split(out.last().unwrap(), &bx, 0), 0);
    }

    // Zero gradient: fall back to the widest dimension.
    #[test]
    fn choose_split_zero_smear_picks_widest() {
        let net = linear_net(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.0, 0.0]);
        let bx = InputBox::from_bounds(vec![0.0, 0.0], vec![0.1, 3.0]).unwrap();
        let out = propagate(&net, &bx).unwrap();
        assert_eq!(choose_split(out.last().unwrap(), &bx, 0), 1);
    }

    // A zero radius verifies exactly the correctly classified points.
    #[test]
    fn zero_radius_verifies_exactly_the_correct_predictions() {
        let mut rng = Rng::seed(7);
        let net = Network::kaiming(&[2, 8, 8, 3], &mut rng).unwrap();
        let spec = RobustnessSpec::new(0.0, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut point_rng = Rng::seed(8);
        for _ in 0..30 {
            let x = vec![point_rng.uniform(0.0, 1.0), point_rng.uniform(0.0, 1.0)];
            let truth = predict(&net, &x).unwrap();
            for y in 0..3 {
                let rep = verify_input(&net, &x, y, &spec).unwrap();
                if y == truth {
                    assert_eq!(rep.verdict, Verdict::Verified);
                } else {
                    assert_eq!(rep.verdict, Verdict::Misclassified);
                }
                assert_eq!(rep.nodes, 0);
            }
        }
    }

    // A one-dimensional net whose decision flips at 0.5: the ball around
    // 0.6 with radius 0.3 strictly contains violating points, and the
    // witness must be one of them.
    #[test]
    fn counterexample_witness_is_concrete() {
        let net = linear_net(vec![vec![1.0], vec![-1.0]], vec![0.0, 1.0]);
        let x = vec![0.6f32];
        assert_eq!(predict(&net, &x).unwrap(), 0);
        let spec = RobustnessSpec::new(0.3, vec![0.0], vec![1.0]).unwrap();
        let rep = verify_input(&net, &x, 0, &spec).unwrap();
        match &rep.verdict {
            Verdict::Counterexample(w) => {
                assert_eq!(w.len(), 1);
                assert_ne!(predict(&net, w).unwrap(), 0);
                assert!((f64::from(w[0]) - 0.6).abs() <= 0.3);
                assert!((0.0..=1.0).contains(&w[0]));
            }
            v => panic!("expected a counterexample, got {v:?}"),
        }
    }

    // Logit ties can never be certified and hold no violation either, so
    // the search must bottom out at the depth cap as undecided.
    #[test]
    fn depth_cap_reports_undecided() {
        let net = linear_net(vec![vec![0.0], vec![0.0]], vec![0.0, 0.0]);
        let mut spec = RobustnessSpec::new(0.2, vec![0.0], vec![1.0]).unwrap();
        spec.max_depth = 4;
        let rep = verify_input(&net, &[0.5], 0, &spec).unwrap();
        assert_eq!(rep.verdict, Verdict::Undecided);
        // Full binary tree over the cap: 2^5 - 1 nodes.
        assert_eq!(rep.nodes, 31);
    }

    // A spent time budget is a verdict, not an error, and nothing gets
    // explored once it is zero.
    #[test]
    fn timeout_reports_undecided() {
        let net = linear_net(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]);
        let mut spec = RobustnessSpec::new(0.1, vec![0.0], vec![1.0]).unwrap();
        spec.timeout = Duration::ZERO;
        let rep = verify_input(&net, &[0.8], 0, &spec).unwrap();
        assert_eq!(rep.verdict, Verdict::Undecided);
        assert_eq!(rep.nodes, 0);
    }

    #[test]
    fn misclassified_input_is_recorded_without_search() {
        let net = linear_net(vec![vec![0.0], vec![0.0]], vec![0.0, 1.0]);
        let spec = RobustnessSpec::new(0.1, vec![0.0], vec![1.0]).unwrap();
        let rep = verify_input(&net, &[0.5], 0, &spec).unwrap();
        assert_eq!(rep.verdict, Verdict::Misclassified);
        assert_eq!(rep.nodes, 0);
        assert_eq!(rep.millis, 0);
    }

    // Verdicts against an exhaustive grid over the exact ball: a grid
    // violation forbids `verified`, and a `counterexample` verdict must
    // carry a genuine witness. Each net is random; the labels come from
    // the net itself so the clean point is always correctly classified.
    #[test]
    fn grid_oracle_agreement_on_tiny_nets() {
        for seed in 0..6u64 {
            let mut rng = Rng::seed(100 + seed);
            let net = Network::kaiming(&[2, 8, 8, 2], &mut rng).unwrap();
            let mut point_rng = Rng::seed(200 + seed);
            let x = vec![point_rng.uniform(0.2, 0.8), point_rng.uniform(0.2, 0.8)];
            let y = predict(&net, &x).unwrap();
            let eps = 0.05 + 0.02 * seed as f32;
            let mut spec = spec2(eps);
            spec.max_depth = 14;
            let rep = verify_input(&net, &x, y, &spec).unwrap();

            let lo = [(x[0] - eps).max(0.0), (x[1] - eps).max(0.0)];
            let hi = [(x[0] + eps).min(1.0), (x[1] + eps).min(1.0)];
            let mut grid_violation = false;
            'grid: for i in 0..=200 {
                for j in 0..=200 {
                    let p = [
                        lo[0] + (hi[0] - lo[0]) * i as f32 / 200.0,
                        lo[1] + (hi[1] - lo[1]) * j as f32 / 200.0,
                    ];
                    if argmax(&forward(&net, &p).unwrap()) != y {
                        grid_violation = true;
                        break 'grid;
                    }
                }
            }
            match &rep.verdict {
                Verdict::Verified => {
                    assert!(!grid_violation, "seed {seed}: verified despite grid violation");
                }
                Verdict::Counterexample(w) => {
                    assert_ne!(argmax(&forward(&net, w).unwrap()), y, "seed {seed}: fake witness");
                    for (wi, (xi, (l, h))) in
                        w.iter().zip(x.iter().zip(spec.domain_lo.iter().zip(&spec.domain_hi)))
                    {
                        assert!((f64::from(*wi) - f64::from(*xi)).abs() <= f64::from(eps));
                        assert!(l <= wi && wi <= h);
                    }
                }
                Verdict::Undecided => {}
                Verdict::Misclassified => panic!("seed {seed}: clean point is self-labeled"),
            }
        }
    }

    // An instance where one round of bound propagation is inconclusive on
    // the full ball and on both halves of the first split, yet recursive
    // bisection certifies every leaf: the relaxation only tightens once
    // the boxes get small, so the verdict genuinely needs multiple splits.
    #[test]
    fn bisection_verifies_where_one_shot_propagation_fails() {
        let mut rng = Rng::seed(10);
        let net = Network::kaiming(&[2, 8, 8, 2], &mut rng).unwrap();
        let mut prng = Rng::seed(10 ^ 0xabcd);
        let x = vec![prng.uniform(0.25, 0.75), prng.uniform(0.25, 0.75)];
        let y = predict(&net, &x).unwrap();
        let spec = spec2(0.06);

        let root = InputBox::around(&x, spec.eps, &spec.domain_lo, &spec.domain_hi).unwrap();
        let out = propagate(&net, &root).unwrap();
        assert!(
            !worst_case_logits(out.last().unwrap(), y).verified(),
            "the instance must defeat one-shot propagation"
        );
        let dim = choose_split(out.last().unwrap(), &root, y);
        let (a, b) = root.split(dim).unwrap();
        for half in [&a, &b] {
            let o = propagate(&net, half).unwrap();
            assert!(
                !worst_case_logits(o.last().unwrap(), y).verified(),
                "the instance must also defeat a single split"
            );
        }

        let rep = verify_input(&net, &x, y, &spec).unwrap();
        assert_eq!(rep.verdict, Verdict::Verified);
        assert!(rep.nodes >= 7, "expected a multi-level tree, got {} nodes", rep.nodes);
    }

    // One worker must reproduce the sequential search exactly: same
    // verdicts (including witnesses) and same node counts.
    #[test]
    fn single_worker_pool_matches_sequential() {
        let (net, samples, eps, dlo, dhi) = crate::fixtures::bisection_benchmark();
        let subset = &samples[..8.min(samples.len())];
        let mut spec = RobustnessSpec::new(eps, dlo, dhi).unwrap();
        spec.max_depth = 12;
        let report = parallel_verify(&net, subset, &spec).unwrap();
        for (i, s) in subset.iter().enumerate() {
            let solo = verify_input(&net, s.x.as_slice(), s.y, &spec).unwrap();
            assert_eq!(report.inputs[i].verdict, solo.verdict, "input {i}");
            assert_eq!(report.inputs[i].nodes, solo.nodes, "input {i}");
        }
    }

    // More workers may only change timings, never verdicts or explored
    // node counts.
    #[test]
    fn worker_count_does_not_change_verdicts() {
        let (net, samples, eps, dlo, dhi) = crate::fixtures::bisection_benchmark();
        let subset = &samples[..8.min(samples.len())];
        let mut spec = RobustnessSpec::new(eps, dlo, dhi).unwrap();
        spec.max_depth = 12;
        let one = parallel_verify(&net, subset, &spec).unwrap();
        spec.workers = 4;
        let four = parallel_verify(&net, subset, &spec).unwrap();
        for (a, b) in one.inputs.iter().zip(&four.inputs) {
            assert_eq!(a.verdict.label(), b.verdict.label(), "input {}", a.index);
            assert_eq!(a.nodes, b.nodes, "input {}", a.index);
        }
        assert_eq!(one.acc, four.acc);
        assert_eq!(one.vra, four.vra);
    }

    // A constant-logit net is immune to any perturbation: every rate is
    // exactly one when the labels agree with the constant prediction.
    #[test]
    fn perfect_net_has_equal_rates() {
        let net = linear_net(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 0.0]);
        let samples: Vec<Sample> =
            (0..10).map(|i| sample(vec![0.1 * i as f32, 0.5], 0)).collect();
        let spec = spec2(0.1);
        let (m, report) = metrics(&net, &samples, &spec, None, 0).unwrap();
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.era, 1.0);
        assert_eq!(m.vra, 1.0);
        assert!(report.inputs.iter().all(|r| r.verdict == Verdict::Verified));
    }

    // The ordering VRA <= ERA <= ACC must hold on every metrics call.
    #[test]
    fn metrics_rates_are_ordered() {
        let (net, samples, eps, dlo, dhi) = crate::fixtures::bisection_benchmark();
        let subset = &samples[..12.min(samples.len())];
        let mut spec = RobustnessSpec::new(eps, dlo, dhi).unwrap();
        spec.max_depth = 10;
        spec.workers = 4;
        let (m, report) = metrics(&net, subset, &spec, None, 3).unwrap();
        assert!(m.vra <= m.era, "VRA {} > ERA {}", m.vra, m.era);
        assert!(m.era <= m.acc, "ERA {} > ACC {}", m.era, m.acc);
        assert_eq!(report.era, Some(m.era));
    }

    // With labels drawn uniformly at random, clean accuracy concentrates
    // around 1/k: stay within three binomial standard deviations.
    #[test]
    fn accuracy_matches_chance_on_random_labels() {
        let mut rng = Rng::seed(42);
        let net = Network::kaiming(&[2, 10, 10, 4], &mut rng).unwrap();
        let mut sample_rng = Rng::seed(43);
        let n = 400usize;
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                let x = vec![sample_rng.uniform(0.0, 1.0), sample_rng.uniform(0.0, 1.0)];
                let y = sample_rng.below(4);
                sample(x, y)
            })
            .collect();
        let spec = spec2(0.001);
        let report = parallel_verify(&net, &samples, &spec).unwrap();
        let p = 0.25f32;
        let sigma = (p * (1.0 - p) / n as f32).sqrt();
        assert!(
            (report.acc - p).abs() <= 3.0 * sigma,
            "acc {} strays from chance {p} (sigma {sigma})",
            report.acc
        );
    }

    #[test]
    fn csv_report_is_well_formed() {
        let net = linear_net(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.5]);
        let samples = vec![sample(vec![0.9], 0), sample(vec![0.2], 0), sample(vec![0.9], 1)];
        let spec = RobustnessSpec::new(0.05, vec![0.0], vec![1.0]).unwrap();
        let (_, report) = metrics(&net, &samples, &spec, None, 0).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,verdict,nodes,millis");
        assert_eq!(lines.len(), 1 + samples.len());
        for (i, line) in lines[1..].iter().enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 4);
            assert_eq!(cols[0], i.to_string());
            assert!(["verified", "counterexample", "undecided", "misclassified"].contains(&cols[1]));
            cols[2].parse::<usize>().unwrap();
            cols[3].parse::<u64>().unwrap();
        }
        let summary = summary_line(&report);
        assert!(summary.starts_with("ACC="), "{summary}");
        assert!(summary.contains(",ERA="), "{summary}");
        assert!(summary.contains(",VRA="), "{summary}");
    }

    #[test]
    fn spec_validation_rejects_bad_values() {
        assert!(RobustnessSpec::new(-0.1, vec![0.0], vec![1.0]).is_err());
        assert!(RobustnessSpec::new(f32::NAN, vec![0.0], vec![1.0]).is_err());
        assert!(RobustnessSpec::new(0.1, vec![1.0], vec![0.0]).is_err());
        assert!(RobustnessSpec::new(0.1, vec![0.0, 0.0], vec![1.0]).is_err());
        let mut spec = RobustnessSpec::new(0.1, vec![0.0], vec![1.0]).unwrap();
        spec.workers = 0;
        assert!(spec.validate().is_err());
    }
}
