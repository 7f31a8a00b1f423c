//! Certified global optimization of ReLU networks and ensemble envelopes over
//! boxes.
//!
//! Bounds come from interval bound propagation; the search is best-first
//! branch-and-bound with input-domain bisection. The incumbent is seeded by a
//! projected gradient ascent at the root and refined at the center of every
//! expanded node. All searches are phrased as maximization; minimization
//! negates the objective and flips the enclosure.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::InputBox;
use crate::error::{Error, Result};
use crate::inn::{active_members, envelope, ImpreciseNet};
use crate::net::Network;
use crate::par;
use crate::rng::substream;

/// Interval bounds of every layer output over `b` (unchecked dims).
fn ibp_unchecked(net: &Network, b: &InputBox) -> (f64, f64) {
    let mut lo = b.lo().to_vec();
    let mut hi = b.hi().to_vec();
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        let mut next_lo = Vec::with_capacity(layer.out_dim());
        let mut next_hi = Vec::with_capacity(layer.out_dim());
        for o in 0..layer.out_dim() {
            let mut acc_lo = layer.biases()[o];
            let mut acc_hi = layer.biases()[o];
            for (w, (l_in, h_in)) in layer.row(o).iter().zip(lo.iter().zip(&hi)) {
                if *w >= 0.0 {
                    acc_lo += w * l_in;
                    acc_hi += w * h_in;
                } else {
                    acc_lo += w * h_in;
                    acc_hi += w * l_in;
                }
            }
            if l < last {
                acc_lo = acc_lo.max(0.0);
                acc_hi = acc_hi.max(0.0);
            }
            next_lo.push(acc_lo);
            next_hi.push(acc_hi);
        }
        lo = next_lo;
        hi = next_hi;
    }
    (lo[0], hi[0])
}

/// Sound output range of `net` over `b`.
pub fn ibp_bounds(net: &Network, b: &InputBox) -> Result<(f64, f64)> {
    b.check_dim(net.input_dim())?;
    Ok(ibp_unchecked(net, b))
}

/// A scalar function with an input gradient.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// An [`Objective`] with a sound upper bound over any box.
pub trait BoundedObjective: Objective {
    fn upper_bound(&self, b: &InputBox) -> f64;
}

/// Adapts a closure pair into an [`Objective`].
pub struct FnObjective<F, G> {
    pub dim: usize,
    pub f: F,
    pub grad: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        ((self.f)(x), (self.grad)(x))
    }
}

pub const LOCAL_SEARCH_STEPS: usize = 200;

/// Projected gradient ascent from the box center plus `starts` uniform
/// random points. Returns the best point found.
pub fn local_search<O: Objective + ?Sized>(
    objective: &O,
    b: &InputBox,
    starts: usize,
    seed: u64,
) -> (Vec<f64>, f64) {
    let mut rng = substream(seed, &[]);
    let mut points = vec![b.center()];
    points.extend((0..starts).map(|_| b.sample(&mut rng)));
    let runs = par::map_slice(&points, |p| ascend(objective, b, p.clone()));
    runs.into_iter()
        .fold(None, |best: Option<(Vec<f64>, f64)>, run| match best {
            Some(ref bst) if bst.1 >= run.1 => best,
            _ => Some(run),
        })
        .expect("at least the center is searched")
}

fn ascend<O: Objective + ?Sized>(objective: &O, b: &InputBox, mut x: Vec<f64>) -> (Vec<f64>, f64) {
    let min_width = b
        .widths()
        .into_iter()
        .filter(|w| *w > 0.0)
        .fold(f64::INFINITY, f64::min);
    let (mut value, mut grad) = objective.value_and_grad(&x);
    if !min_width.is_finite() {
        return (x, value);
    }
    let mut step = 0.1 * min_width;
    let floor = 1e-12 * min_width;
    for _ in 0..LOCAL_SEARCH_STEPS {
        // drop components pushing against an active bound
        for (i, g) in grad.iter_mut().enumerate() {
            if (x[i] >= b.hi()[i] && *g > 0.0) || (x[i] <= b.lo()[i] && *g < 0.0) {
                *g = 0.0;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() || step < floor {
            break;
        }
        let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v + step * g / norm).collect();
        b.clamp(&mut cand);
        let (cand_value, cand_grad) = objective.value_and_grad(&cand);
        if cand_value > value {
            x = cand;
            value = cand_value;
            grad = cand_grad;
        } else {
            step *= 0.5;
        }
    }
    (x, value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnbConfig {
    /// Absolute optimality gap.
    pub tolerance: f64,
    pub max_nodes: usize,
    pub local_search_starts: usize,
    pub seed: u64,
    /// Nodes popped and bounded together per round. Results depend on this
    /// value but not on the number of worker threads.
    pub batch: usize,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_nodes: 200_000,
            local_search_starts: 4,
            seed: 0,
            batch: 1,
        }
    }
}

impl BnbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.max_nodes == 0 || self.batch == 0 {
            return Err(Error::invalid("max_nodes and batch must be >= 1"));
        }
        Ok(())
    }
}

/// A proven enclosure `[value_lo, value_hi]` of a global optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedOptimum {
    pub value_lo: f64,
    pub value_hi: f64,
    pub witness: Vec<f64>,
    pub certified: bool,
    pub nodes_expanded: usize,
    pub wall_time_s: f64,
}

impl CertifiedOptimum {
    pub fn gap(&self) -> f64 {
        self.value_hi - self.value_lo
    }

    fn negated(self) -> Self {
        Self {
            value_lo: -self.value_hi,
            value_hi: -self.value_lo,
            ..self
        }
    }
}

struct Node {
    bound: f64,
    seq: u64,
    region: InputBox,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // max-heap on bound, earlier nodes first on ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Widest dimension relative to the root box; lowest index on ties.
fn split_dim(node: &InputBox, root_widths: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, rw) in root_widths.iter().enumerate() {
        if *rw <= 0.0 {
            continue;
        }
        let w = node.width(i) / rw;
        if w > 0.0 && best.is_none_or(|(_, bw)| w > bw) {
            best = Some((i, w));
        }
    }
    best.map(|(i, _)| i)
}

struct Expansion {
    center: Vec<f64>,
    center_value: f64,
    children: Vec<(InputBox, f64)>,
}

/// Best-first branch-and-bound maximization of `objective` over `root`.
pub fn maximize<O: BoundedObjective + ?Sized>(
    objective: &O,
    root: &InputBox,
    cfg: &BnbConfig,
) -> Result<CertifiedOptimum> {
    cfg.validate()?;
    root.check_dim(objective.dim())?;
    let started = Instant::now();
    let tol = cfg.tolerance;
    let root_widths = root.widths();

    let (mut best_x, mut best) = local_search(objective, root, cfg.local_search_starts, cfg.seed);
    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    // largest bound among discarded nodes
    let mut pruned_hi = f64::NEG_INFINITY;
    let root_bound = objective.upper_bound(root);
    if root_bound - best <= tol {
        pruned_hi = root_bound;
    } else {
        queue.push(Node {
            bound: root_bound,
            seq,
            region: root.clone(),
        });
    }
    seq += 1;

    let mut expanded = 0usize;
    while let Some(top) = queue.peek() {
        if top.bound - best <= tol || expanded >= cfg.max_nodes {
            break;
        }
        let take = cfg.batch.min(cfg.max_nodes - expanded);
        let mut popped = Vec::with_capacity(take);
        while popped.len() < take {
            match queue.peek() {
                Some(n) if n.bound - best > tol => popped.push(queue.pop().expect("peeked")),
                _ => break,
            }
        }
        expanded += popped.len();
        let expansions = par::map_slice(&popped, |node| {
            let center = node.region.center();
            let center_value = objective.value(&center);
            let children = match split_dim(&node.region, &root_widths) {
                Some(d) => {
                    let (a, b) = node.region.bisect(d);
                    [a, b]
                        .into_iter()
                        .map(|c| {
                            let bound = objective.upper_bound(&c).min(node.bound);
                            (c, bound)
                        })
                        .collect()
                }
                // a point: its bound is its value up to rounding
                None => Vec::new(),
            };
            Expansion {
                center,
                center_value,
                children,
            }
        });
        for (node, exp) in popped.iter().zip(expansions) {
            if exp.center_value > best {
                best = exp.center_value;
                best_x = exp.center;
            }
            if exp.children.is_empty() {
                pruned_hi = pruned_hi.max(node.bound);
            }
            for (region, bound) in exp.children {
                if bound - best <= tol {
                    pruned_hi = pruned_hi.max(bound);
                } else {
                    queue.push(Node { bound, seq, region });
                    seq += 1;
                }
            }
        }
    }

    let open_hi = queue.peek().map_or(f64::NEG_INFINITY, |n| n.bound);
    let value_hi = open_hi.max(pruned_hi).max(best);
    Ok(CertifiedOptimum {
        value_lo: best,
        value_hi,
        witness: best_x,
        certified: value_hi - best <= tol,
        nodes_expanded: expanded,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// `+f` or `-f` of a single network.
pub struct NetObjective<'a> {
    pub net: &'a Network,
    pub negate: bool,
}

impl Objective for NetObjective<'_> {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = self.net.eval(x);
        if self.negate {
            -v
        } else {
            v
        }
    }

    fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (v, mut g) = self.net.value_and_input_grad(x);
        if self.negate {
            g.iter_mut().for_each(|d| *d = -*d);
            (-v, g)
        } else {
            (v, g)
        }
    }
}

impl BoundedObjective for NetObjective<'_> {
    fn upper_bound(&self, b: &InputBox) -> f64 {
        let (lo, hi) = ibp_unchecked(self.net, b);
        if self.negate {
            -lo
        } else {
            hi
        }
    }
}

/// Envelope objectives of an [`ImpreciseNet`], evaluated in raw input
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    /// `upper(x) - lower(x)`
    Uncertainty,
    /// `-lower(x)`, i.e. minimize the lower envelope
    NegLower,
    /// `upper(x)`
    Upper,
}

pub struct EnvelopeObjective<'a> {
    pub inn: &'a ImpreciseNet,
    pub kind: EnvelopeKind,
}

impl EnvelopeObjective<'_> {
    fn member_grad(&self, member: usize, z: &[f64]) -> Vec<f64> {
        let (_, g) = self.inn.members()[member].value_and_input_grad(z);
        g.iter().zip(self.inn.input_scale()).map(|(d, s)| d * s).collect()
    }
}

impl Objective for EnvelopeObjective<'_> {
    fn dim(&self) -> usize {
        self.inn.input_dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (lo, hi) = envelope(&self.inn.member_values(x));
        match self.kind {
            EnvelopeKind::Uncertainty => hi - lo,
            EnvelopeKind::NegLower => -lo,
            EnvelopeKind::Upper => hi,
        }
    }

    fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let z = self.inn.member_input(x);
        let values: Vec<f64> = self.inn.members().iter().map(|m| m.eval(&z)).collect();
        let (lo_idx, hi_idx) = active_members(&values);
        let (lo, hi) = (values[lo_idx], values[hi_idx]);
        match self.kind {
            EnvelopeKind::Uncertainty => {
                if lo_idx == hi_idx {
                    return (0.0, vec![0.0; x.len()]);
                }
                let g_hi = self.member_grad(hi_idx, &z);
                let g_lo = self.member_grad(lo_idx, &z);
                (hi - lo, g_hi.iter().zip(&g_lo).map(|(a, b)| a - b).collect())
            }
            EnvelopeKind::NegLower => {
                let g = self.member_grad(lo_idx, &z);
                (-lo, g.into_iter().map(|d| -d).collect())
            }
            EnvelopeKind::Upper => (hi, self.member_grad(hi_idx, &z)),
        }
    }
}

impl BoundedObjective for EnvelopeObjective<'_> {
    fn upper_bound(&self, b: &InputBox) -> f64 {
        let z = self.inn.member_box(b);
        let bounds: Vec<(f64, f64)> = self
            .inn
            .members()
            .iter()
            .map(|m| ibp_unchecked(m, &z))
            .collect();
        let max_hi = bounds.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
        let min_lo = bounds.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
        match self.kind {
            EnvelopeKind::Uncertainty => {
                if self.inn.k() == 1 {
                    0.0
                } else {
                    max_hi - min_lo
                }
            }
            EnvelopeKind::NegLower => -min_lo,
            EnvelopeKind::Upper => max_hi,
        }
    }
}

pub fn maximize_net(net: &Network, b: &InputBox, cfg: &BnbConfig) -> Result<CertifiedOptimum> {
    maximize(&NetObjective { net, negate: false }, b, cfg)
}

pub fn minimize_net(net: &Network, b: &InputBox, cfg: &BnbConfig) -> Result<CertifiedOptimum> {
    maximize(&NetObjective { net, negate: true }, b, cfg).map(CertifiedOptimum::negated)
}

pub fn maximize_uncertainty(
    inn: &ImpreciseNet,
    b: &InputBox,
    cfg: &BnbConfig,
) -> Result<CertifiedOptimum> {
    let objective = EnvelopeObjective {
        inn,
        kind: EnvelopeKind::Uncertainty,
    };
    maximize(&objective, b, cfg)
}

pub fn minimize_phi_lower(
    inn: &ImpreciseNet,
    b: &InputBox,
    cfg: &BnbConfig,
) -> Result<CertifiedOptimum> {
    let objective = EnvelopeObjective {
        inn,
        kind: EnvelopeKind::NegLower,
    };
    maximize(&objective, b, cfg).map(CertifiedOptimum::negated)
}

pub fn maximize_phi_upper(
    inn: &ImpreciseNet,
    b: &InputBox,
    cfg: &BnbConfig,
) -> Result<CertifiedOptimum> {
    let objective = EnvelopeObjective {
        inn,
        kind: EnvelopeKind::Upper,
    };
    maximize(&objective, b, cfg)
}

/// A verification result as written to report files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub problem: String,
    #[serde(rename = "box")]
    pub region: InputBox,
    pub value_lo: f64,
    pub value_hi: f64,
    pub witness: Vec<f64>,
    pub certified: bool,
    pub nodes_expanded: usize,
    pub wall_time_s: f64,
}

impl VerificationRecord {
    pub fn new(problem: impl Into<String>, region: &InputBox, opt: &CertifiedOptimum) -> Self {
        Self {
            problem: problem.into(),
            region: region.clone(),
            value_lo: opt.value_lo,
            value_hi: opt.value_hi,
            witness: opt.witness.clone(),
            certified: opt.certified,
            nodes_expanded: opt.nodes_expanded,
            wall_time_s: opt.wall_time_s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Layer, NetworkSpec};

    fn linear_net(w: &[f64], b: f64) -> Network {
        // a huge hidden bias keeps the ReLU in its linear regime on [-1, 1]^d
        let d = w.len();
        let spec = NetworkSpec::new(d, vec![1]).unwrap();
        Network::new(
            spec,
            vec![
                Layer::new(d, 1, w.to_vec(), vec![100.0]).unwrap(),
                Layer::new(1, 1, vec![1.0], vec![b - 100.0]).unwrap(),
            ],
        )
        .unwrap()
    }

    /// hat(x) = min(x, 1 - x) = x - relu(2x - 1) on [0, 1]
    pub(crate) fn hat_net() -> Network {
        let spec = NetworkSpec::new(1, vec![2]).unwrap();
        Network::new(
            spec,
            vec![
                Layer::new(1, 2, vec![1.0, 2.0], vec![0.0, -1.0]).unwrap(),
                Layer::new(2, 1, vec![1.0, -1.0], vec![0.0]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn ibp_hand_cases() {
        // affine [[1, -1]] then identity-through-relu offset
        let spec = NetworkSpec::new(2, vec![1]).unwrap();
        let net = Network::new(
            spec,
            vec![
                Layer::new(2, 1, vec![1.0, -1.0], vec![0.0]).unwrap(),
                Layer::new(1, 1, vec![1.0], vec![0.0]).unwrap(),
            ],
        )
        .unwrap();
        let unit = InputBox::cube(2, 0.0, 1.0).unwrap();
        // pre-activation range is [-1, 1]; relu clamps it to [0, 1]
        assert_eq!(ibp_bounds(&net, &unit).unwrap(), (0.0, 1.0));
        let lin = linear_net(&[1.0, -1.0], 0.0);
        assert_eq!(ibp_bounds(&lin, &unit).unwrap(), (-1.0, 1.0));
        assert!(ibp_bounds(&net, &InputBox::cube(3, 0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn local_search_finds_quadratic_peak() {
        let c = [0.3, -0.2];
        let obj = FnObjective {
            dim: 2,
            f: |x: &[f64]| -((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)),
            grad: |x: &[f64]| vec![-2.0 * (x[0] - c[0]), -2.0 * (x[1] - c[1])],
        };
        let b = InputBox::cube(2, -1.0, 1.0).unwrap();
        let (x, v) = local_search(&obj, &b, 3, 0);
        assert!((x[0] - c[0]).abs() < 1e-3 && (x[1] - c[1]).abs() < 1e-3);
        assert!(v > -2e-6);
    }

    #[test]
    fn local_search_constant_and_linear() {
        let b = InputBox::new(vec![0.0, 2.0], vec![1.0, 5.0]).unwrap();
        let flat = FnObjective {
            dim: 2,
            f: |_: &[f64]| 4.0,
            grad: |_: &[f64]| vec![0.0, 0.0],
        };
        let (x, v) = local_search(&flat, &b, 2, 1);
        assert!(b.contains(&x));
        assert_eq!(v, 4.0);
        let lin = FnObjective {
            dim: 2,
            f: |x: &[f64]| 2.0 * x[0] - x[1],
            grad: |_: &[f64]| vec![2.0, -1.0],
        };
        let (x, v) = local_search(&lin, &b, 2, 1);
        assert!(b.contains(&x));
        assert!(v >= 2.0 * 0.5 - 3.5);
        assert!((v - 0.0).abs() < 1e-6, "reaches corner (1, 2): {v}");
    }

    #[test]
    fn linear_net_optimum_at_corner() {
        let net = linear_net(&[0.5, -2.0, 1.5], 0.25);
        let b = InputBox::cube(3, -1.0, 1.0).unwrap();
        let cfg = BnbConfig::default();
        let max = maximize_net(&net, &b, &cfg).unwrap();
        let expected_max = 0.5 + 2.0 + 1.5 + 0.25;
        assert!(max.certified);
        assert!(max.value_lo <= expected_max + 1e-9 && expected_max <= max.value_hi + 1e-9);
        let min = minimize_net(&net, &b, &cfg).unwrap();
        let expected_min = -0.5 - 2.0 - 1.5 + 0.25;
        assert!(min.certified);
        assert!(min.value_lo - 1e-9 <= expected_min && expected_min <= min.value_hi + 1e-9);
    }

    #[test]
    fn hat_maximum_certified() {
        let b = InputBox::new(vec![0.0], vec![1.0]).unwrap();
        let cfg = BnbConfig {
            tolerance: 1e-6,
            ..BnbConfig::default()
        };
        let opt = maximize_net(&hat_net(), &b, &cfg).unwrap();
        assert!(opt.certified);
        assert!(opt.value_lo <= 0.5 + 1e-12 && 0.5 <= opt.value_hi);
        assert!(opt.gap() <= 1e-6);
        assert!((opt.witness[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn gap_contract_under_tiny_budget() {
        let b = InputBox::new(vec![0.0], vec![1.0]).unwrap();
        let cfg = BnbConfig {
            tolerance: 1e-12,
            max_nodes: 3,
            local_search_starts: 0,
            ..BnbConfig::default()
        };
        let opt = maximize_net(&hat_net(), &b, &cfg).unwrap();
        assert!(opt.nodes_expanded <= 3);
        assert!(opt.value_hi >= 0.5);
        assert!(opt.certified == (opt.gap() <= cfg.tolerance));
    }

    #[test]
    fn batched_search_is_sound() {
        let b = InputBox::new(vec![0.0], vec![1.0]).unwrap();
        let cfg = BnbConfig {
            batch: 8,
            tolerance: 1e-6,
            ..BnbConfig::default()
        };
        let opt = maximize_net(&hat_net(), &b, &cfg).unwrap();
        assert!(opt.certified && opt.value_hi >= 0.5 && opt.value_lo <= 0.5 + 1e-12);
    }
}
