//! Valence, decision gadgets and the metric that picks the first one.
//!
//! All analyses go through [`Analyzer`], which memoizes on node keys. The
//! key of a node for anything below it is `(config, vertex tag, remaining
//! height)`; decision values additionally depend on the decisions already
//! made on the path, carried as a two-bit mask.
//!
//! Ranks are never computed by sorting the whole tree. For a key, `hist[t]`
//! counts the non-⊥ descendants Y (itself included) with
//! `depth(Y) − depth(node) + k_Y = t`. The rank of X is then the number of
//! nodes at a smaller level `d + k`, plus the same-level nodes that precede
//! X lexicographically: its same-level ancestors, and the same-level nodes
//! under every smaller-metric sibling of an ancestor.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ioa::{Action, ActionName, KernelError, Loc, TaskLabel};
use crate::observation::VertexId;
use crate::tree::{Child, ExecutionTree, NodeKey, TreeEdge};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Valence {
    Bivalent,
    ZeroValent,
    OneValent,
    Undecided,
}

impl Valence {
    /// From a mask with bit v set when v is a decision value.
    pub fn from_mask(mask: u8) -> Valence {
        match mask & 3 {
            3 => Valence::Bivalent,
            1 => Valence::ZeroValent,
            2 => Valence::OneValent,
            _ => Valence::Undecided,
        }
    }

    pub fn univalent(self) -> Option<u8> {
        match self {
            Valence::ZeroValent => Some(0),
            Valence::OneValent => Some(1),
            _ => None,
        }
    }
}

impl fmt::Display for Valence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Valence::Bivalent => "bivalent",
            Valence::ZeroValent => "0-valent",
            Valence::OneValent => "1-valent",
            Valence::Undecided => "undecided",
        })
    }
}

/// Bit for a decide event, 0 for anything else.
pub fn decision_bit(a: &Action) -> u8 {
    match (a.name == ActionName::Decide, a.bit()) {
        (true, Some(v)) => 1 << v,
        _ => 0,
    }
}

pub fn path_mask(path: &[TreeEdge]) -> u8 {
    path.iter().filter_map(|e| e.action.as_ref()).fold(0, |m, a| m | decision_bit(a))
}

pub fn label_metric(l: &TaskLabel, n: u8) -> u64 {
    let n = n as u64;
    match *l {
        TaskLabel::Proc(i) => i.0 as u64,
        TaskLabel::Env(i, x) => n + 2 * i.0 as u64 - 1 + x as u64,
        TaskLabel::Chan(i, j) => {
            let (i, j) = (i.0 as u64, j.0 as u64);
            let adj = if j < i { j } else { j - 1 };
            3 * n + (n - 1) * (i - 1) + adj
        }
        TaskLabel::Fd(i) => n * n + 2 * n + i.0 as u64,
        TaskLabel::Named(_) => 0,
    }
}

pub fn vertex_metric(v: Option<VertexId>, n: u8) -> u64 {
    v.map_or(0, |v| v.index as u64 * n as u64 + v.loc.0 as u64)
}

pub fn edge_metric(e: &TreeEdge, n: u8) -> (u64, u64) {
    (vertex_metric(e.vertex, n), label_metric(&e.label, n))
}

/// π(a, b) = (a+b)(a+b+1)/2 + b, or `None` past u128.
pub fn cantor_pair(a: u128, b: u128) -> Option<u128> {
    let s = a.checked_add(b)?;
    let t = if s % 2 == 0 { (s / 2).checked_mul(s + 1)? } else { s.checked_mul(s.div_ceil(2))? };
    t.checked_add(b)
}

/// Node metric: level `d + k`, then the edge metrics of the path, compared
/// lexicographically with a proper prefix ranking first.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeMetric {
    pub level: u64,
    pub edges: Vec<(u64, u64)>,
}

impl NodeMetric {
    pub fn of(path: &[TreeEdge], n: u8) -> NodeMetric {
        let k = path.last().and_then(|e| e.vertex).map_or(0, |v| v.index as u64);
        NodeMetric { level: path.len() as u64 + k, edges: path.iter().map(|e| edge_metric(e, n)).collect() }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum GadgetKind {
    Fork,
    Hook,
}

impl fmt::Display for GadgetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GadgetKind::Fork => "fork",
            GadgetKind::Hook => "hook",
        })
    }
}

/// A fork `(N, l, E^l, E'^l)` or a hook `(N, l, r, E^l, E^r, E^{rl})`.
/// `second` is E'^l for a fork and E^{rl} for a hook.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Gadget {
    pub kind: GadgetKind,
    pub node: Vec<TreeEdge>,
    pub e_l: TreeEdge,
    pub e_r: Option<TreeEdge>,
    pub second: TreeEdge,
    /// N^l is v-valent; the other endpoint is (1−v)-valent.
    pub v: u8,
}

#[derive(Clone, PartialEq, Eq, Debug, Error)]
pub enum GadgetError {
    #[error("gadget tags occur at different locations ({first} and {second})")]
    LocationMismatch { first: Loc, second: Loc },
    #[error("gadget has a ⊥ action tag where one is required")]
    MissingAction,
}

impl Gadget {
    pub fn l(&self) -> &TaskLabel {
        &self.e_l.label
    }

    pub fn r(&self) -> Option<&TaskLabel> {
        self.e_r.as_ref().map(|e| &e.label)
    }

    pub fn lower(&self) -> Vec<TreeEdge> {
        let mut p = self.node.clone();
        p.push(self.e_l.clone());
        p
    }

    /// The other endpoint as a non-⊥ path: E'^l's child for a fork, and
    /// for a hook the l-child of N^r with any ⊥ edge dropped (a ⊥ child
    /// has the same tags and execution as its parent).
    pub fn other(&self) -> Vec<TreeEdge> {
        let mut p = self.node.clone();
        p.extend(self.e_r.iter().cloned());
        p.push(self.second.clone());
        p.retain(|e| e.action.is_some());
        p
    }

    pub fn critical_location(&self) -> Result<Loc, GadgetError> {
        let first = self.e_l.action.as_ref().ok_or(GadgetError::MissingAction)?.loc;
        let other = match self.kind {
            GadgetKind::Fork => &self.second,
            GadgetKind::Hook => self.e_r.as_ref().ok_or(GadgetError::MissingAction)?,
        };
        let second = other.action.as_ref().ok_or(GadgetError::MissingAction)?.loc;
        if first == second {
            Ok(first)
        } else {
            Err(GadgetError::LocationMismatch { first, second })
        }
    }

    /// Short stable hash of N's path.
    pub fn node_hash(&self) -> String {
        path_hash(&self.node)
    }
}

impl fmt::Display for Gadget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} l={}", self.kind, self.e_l.label)?;
        if let Some(r) = &self.e_r {
            write!(f, " r={}", r.label)?;
        }
        Ok(())
    }
}

pub fn path_hash(path: &[TreeEdge]) -> String {
    let mut h = Sha256::new();
    for e in path {
        h.update(e.to_string().as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RankedGadget {
    pub gadget: Gadget,
    /// rank(N), rank(N^l), rank of the other endpoint.
    pub ranks: (u128, u128, u128),
    pub metric: u128,
}

#[derive(Clone, PartialEq, Eq, Debug, Error)]
pub enum AnalysisError {
    #[error("tree analysis exceeded its budget of {budget} expanded nodes")]
    Capacity { budget: usize },
    #[error("gadget metric exceeds 128 bits")]
    Overflow,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct Counters {
    pub expanded: u64,
    pub memo_hits: u64,
}

/// A node reached through non-⊥ edges, with its key.
#[derive(Clone, Debug)]
struct Frame {
    path: Vec<TreeEdge>,
    key: NodeKey,
    mask: u8,
}

/// Non-⊥ nodes in rank order with their metrics.
pub type RankTable = Vec<(NodeMetric, Vec<TreeEdge>)>;

pub const DEFAULT_BUDGET: usize = 2_000_000;

pub struct Analyzer<'t> {
    tree: &'t ExecutionTree,
    budget: usize,
    kids: HashMap<NodeKey, Arc<Vec<Child>>>,
    values: HashMap<(NodeKey, usize, u8), u8>,
    hists: HashMap<(NodeKey, usize), Arc<Vec<u64>>>,
    pub counters: Counters,
}

fn child_key(c: &Child) -> NodeKey {
    NodeKey { config: c.config.clone(), vertex: c.vertex }
}

fn same_edge(a: &TreeEdge, b: &TreeEdge) -> bool {
    a.label == b.label && a.vertex == b.vertex
}

impl<'t> Analyzer<'t> {
    pub fn new(tree: &'t ExecutionTree) -> Analyzer<'t> {
        Analyzer::with_budget(tree, DEFAULT_BUDGET)
    }

    /// `budget` caps the number of distinct node keys expanded.
    pub fn with_budget(tree: &'t ExecutionTree, budget: usize) -> Analyzer<'t> {
        Analyzer { tree, budget, kids: HashMap::new(), values: HashMap::new(), hists: HashMap::new(), counters: Counters::default() }
    }

    pub fn tree(&self) -> &ExecutionTree {
        self.tree
    }

    fn height(&self) -> usize {
        self.tree.height()
    }

    fn children(&mut self, key: &NodeKey) -> Result<Arc<Vec<Child>>, AnalysisError> {
        if let Some(c) = self.kids.get(key) {
            self.counters.memo_hits += 1;
            return Ok(c.clone());
        }
        if self.kids.len() >= self.budget {
            return Err(AnalysisError::Capacity { budget: self.budget });
        }
        let c = Arc::new(self.tree.children(&key.config, key.vertex)?);
        self.counters.expanded += 1;
        self.kids.insert(key.clone(), c.clone());
        Ok(c)
    }

    fn root_frame(&self) -> Frame {
        let r = self.tree.root();
        Frame { key: r.key(), path: Vec::new(), mask: 0 }
    }

    /// Walk a path from the root.
    fn frame_at(&mut self, path: &[TreeEdge]) -> Result<Frame, AnalysisError> {
        let mut f = self.root_frame();
        for e in path {
            let kids = self.children(&f.key)?;
            let c = kids.iter().find(|c| same_edge(&c.edge, e)).expect("path follows tree edges");
            f.key = child_key(c);
            f.mask |= c.edge.action.as_ref().map_or(0, decision_bit);
            f.path.push(c.edge.clone());
        }
        Ok(f)
    }

    fn values_below(&mut self, key: &NodeKey, remaining: usize, mask: u8) -> Result<u8, AnalysisError> {
        if remaining == 0 || mask == 3 {
            return Ok(mask);
        }
        let memo = (key.clone(), remaining, mask);
        if let Some(&v) = self.values.get(&memo) {
            self.counters.memo_hits += 1;
            return Ok(v);
        }
        let mut out = mask;
        for c in self.children(key)?.iter() {
            if let Some(a) = &c.edge.action {
                out |= self.values_below(&child_key(c), remaining - 1, mask | decision_bit(a))?;
                if out == 3 {
                    break;
                }
            }
        }
        self.values.insert(memo, out);
        Ok(out)
    }

    /// Decision values of the node at `path`, as a mask. Only non-⊥ edges
    /// are followed below the node; a ⊥ child has its parent's tags, so
    /// nothing is lost.
    pub fn decision_mask(&mut self, path: &[TreeEdge]) -> Result<u8, AnalysisError> {
        let f = self.frame_at(path)?;
        let remaining = self.height().saturating_sub(path.len());
        self.values_below(&f.key, remaining, f.mask)
    }

    pub fn decision_values(&mut self, path: &[TreeEdge]) -> Result<Vec<u8>, AnalysisError> {
        let m = self.decision_mask(path)?;
        Ok((0..2).filter(|v| m & (1 << v) != 0).collect())
    }

    pub fn valence(&mut self, path: &[TreeEdge]) -> Result<Valence, AnalysisError> {
        Ok(Valence::from_mask(self.decision_mask(path)?))
    }

    fn hist(&mut self, key: &NodeKey, remaining: usize) -> Result<Arc<Vec<u64>>, AnalysisError> {
        let memo = (key.clone(), remaining);
        if let Some(h) = self.hists.get(&memo) {
            self.counters.memo_hits += 1;
            return Ok(h.clone());
        }
        let len = 2 * self.height() + 2;
        let mut h = vec![0u64; len];
        h[key.vertex.map_or(0, |v| v.index as usize)] += 1;
        if remaining > 0 {
            for c in self.children(key)?.iter().filter(|c| c.edge.action.is_some()) {
                let hc = self.hist(&child_key(c), remaining - 1)?;
                for t in 1..len {
                    h[t] = h[t].checked_add(hc[t - 1]).ok_or(AnalysisError::Overflow)?;
                }
            }
        }
        let h = Arc::new(h);
        self.hists.insert(memo, h.clone());
        Ok(h)
    }

    /// Number of non-⊥ nodes in the tree.
    pub fn non_bot_count(&mut self) -> Result<u128, AnalysisError> {
        let root = self.root_frame();
        let h = self.hist(&root.key, self.height())?;
        Ok(h.iter().map(|&x| x as u128).sum())
    }

    /// Rank of a non-⊥ node among all non-⊥ nodes, ordered by node metric.
    pub fn rank(&mut self, path: &[TreeEdge]) -> Result<u128, AnalysisError> {
        let n = self.tree.n();
        let height = self.height();
        let level = NodeMetric::of(path, n).level as usize;
        let mut a = self.root_frame().key;
        let root_h = self.hist(&a, height)?;
        let mut rank: u128 = root_h[..level.min(root_h.len())].iter().map(|&x| x as u128).sum();
        for (p, edge) in path.iter().enumerate() {
            let k = a.vertex.map_or(0, |v| v.index as usize);
            if p + k == level {
                rank += 1;
            }
            let target = edge_metric(edge, n);
            let kids = self.children(&a)?;
            if level > p {
                for c in kids.iter().filter(|c| c.edge.action.is_some() && edge_metric(&c.edge, n) < target) {
                    rank += self.hist(&child_key(c), height - p - 1)?[level - p - 1] as u128;
                }
            }
            a = child_key(kids.iter().find(|c| same_edge(&c.edge, edge)).expect("path follows tree edges"));
        }
        Ok(rank)
    }

    /// Every non-⊥ node with its metric, sorted: position = rank. Explicit,
    /// so only for small trees.
    pub fn rank_table(&mut self, limit: usize) -> Result<RankTable, AnalysisError> {
        let n = self.tree.n();
        let mut out = Vec::new();
        let mut stack = vec![self.root_frame()];
        while let Some(f) = stack.pop() {
            if out.len() >= limit {
                return Err(AnalysisError::Capacity { budget: limit });
            }
            if f.path.len() < self.height() {
                for c in self.children(&f.key)?.iter().filter(|c| c.edge.action.is_some()) {
                    let mut path = f.path.clone();
                    path.push(c.edge.clone());
                    stack.push(Frame { path, key: child_key(c), mask: 0 });
                }
            }
            out.push((NodeMetric::of(&f.path, n), f.path));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    /// All bivalent non-⊥ nodes. Descendants of a node that is not
    /// bivalent are not bivalent, so the search stops there.
    fn bivalent_frames(&mut self) -> Result<Vec<Frame>, AnalysisError> {
        let mut out = Vec::new();
        let root = self.root_frame();
        if self.values_below(&root.key, self.height(), 0)? != 3 {
            return Ok(out);
        }
        let mut stack = vec![root];
        while let Some(f) = stack.pop() {
            let remaining = self.height() - f.path.len();
            if remaining > 0 {
                for c in self.children(&f.key)?.iter() {
                    let Some(a) = &c.edge.action else { continue };
                    let key = child_key(c);
                    let mask = f.mask | decision_bit(a);
                    if self.values_below(&key, remaining - 1, mask)? == 3 {
                        let mut path = f.path.clone();
                        path.push(c.edge.clone());
                        stack.push(Frame { path, key, mask });
                    }
                }
            }
            out.push(f);
        }
        Ok(out)
    }

    fn gadgets_at(&mut self, f: &Frame) -> Result<Vec<Gadget>, AnalysisError> {
        let remaining = self.height() - f.path.len();
        let mut out = Vec::new();
        if remaining == 0 {
            return Ok(out);
        }
        let kids = self.children(&f.key)?;
        let mut val = Vec::with_capacity(kids.len());
        for c in kids.iter() {
            let mask = f.mask | c.edge.action.as_ref().map_or(0, decision_bit);
            val.push(Valence::from_mask(self.values_below(&child_key(c), remaining - 1, mask)?).univalent());
        }
        let gadget = |kind, e_l: &TreeEdge, e_r: Option<&TreeEdge>, second: &TreeEdge, v| Gadget {
            kind,
            node: f.path.clone(),
            e_l: e_l.clone(),
            e_r: e_r.cloned(),
            second: second.clone(),
            v,
        };
        for (a, ca) in kids.iter().enumerate() {
            let (Some(v), Some(_)) = (val[a], &ca.edge.action) else { continue };
            if !matches!(ca.edge.label, TaskLabel::Fd(_)) {
                continue;
            }
            for (b, cb) in kids.iter().enumerate() {
                if b != a && cb.edge.label == ca.edge.label && cb.edge.action.is_some() && val[b] == Some(1 - v) {
                    out.push(gadget(GadgetKind::Fork, &ca.edge, None, &cb.edge, v));
                }
            }
        }
        if remaining < 2 {
            return Ok(out);
        }
        for cr in kids.iter() {
            let Some(ar) = &cr.edge.action else { continue };
            let rmask = f.mask | decision_bit(ar);
            let rkey = child_key(cr);
            let rkids = self.children(&rkey)?;
            let mut rval = Vec::with_capacity(rkids.len());
            for c in rkids.iter() {
                let mask = rmask | c.edge.action.as_ref().map_or(0, decision_bit);
                rval.push(Valence::from_mask(self.values_below(&child_key(c), remaining - 2, mask)?).univalent());
            }
            for (a, ca) in kids.iter().enumerate() {
                let (Some(v), Some(_)) = (val[a], &ca.edge.action) else { continue };
                for (b, crl) in rkids.iter().enumerate() {
                    if crl.edge.label == ca.edge.label && rval[b] == Some(1 - v) {
                        out.push(gadget(GadgetKind::Hook, &ca.edge, Some(&cr.edge), &crl.edge, v));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn rank_gadget(&mut self, g: Gadget) -> Result<RankedGadget, AnalysisError> {
        let ranks = (self.rank(&g.node)?, self.rank(&g.lower())?, self.rank(&g.other())?);
        let metric = cantor_pair(ranks.1, ranks.2).and_then(|inner| cantor_pair(ranks.0, inner)).ok_or(AnalysisError::Overflow)?;
        Ok(RankedGadget { gadget: g, ranks, metric })
    }

    /// Every non-⊥ decision gadget, ordered by metric.
    pub fn enumerate_gadgets(&mut self) -> Result<Vec<RankedGadget>, AnalysisError> {
        let mut out = Vec::new();
        for f in self.bivalent_frames()? {
            for g in self.gadgets_at(&f)? {
                out.push(self.rank_gadget(g)?);
            }
        }
        out.sort_by_key(|g| (g.metric, g.gadget.kind));
        Ok(out)
    }

    /// The non-⊥ decision gadget with the smallest metric. Bivalent nodes
    /// are visited by rank; since π(r, x) ≥ π(r, 0) the search stops once
    /// π(rank N, 0) exceeds the best metric found.
    pub fn first_gadget(&mut self) -> Result<Option<RankedGadget>, AnalysisError> {
        let frames = self.bivalent_frames()?;
        let mut ranked = Vec::with_capacity(frames.len());
        for f in frames {
            ranked.push((self.rank(&f.path)?, f));
        }
        ranked.sort_by_key(|(r, _)| *r);
        let mut best: Option<RankedGadget> = None;
        for (r, f) in ranked {
            if let Some(b) = &best {
                if cantor_pair(r, 0).ok_or(AnalysisError::Overflow)? > b.metric {
                    break;
                }
            }
            for g in self.gadgets_at(&f)? {
                let rg = self.rank_gadget(g)?;
                let better = match &best {
                    None => true,
                    Some(b) => (rg.metric, rg.gadget.kind) < (b.metric, b.gadget.kind),
                };
                if better {
                    best = Some(rg);
                }
            }
        }
        Ok(best)
    }

    /// The explicit rank table of a small tree together with its first
    /// gadget.
    pub fn rank_and_first(&mut self, limit: usize) -> Result<(RankTable, Option<RankedGadget>), AnalysisError> {
        let table = self.rank_table(limit)?;
        let first = self.first_gadget()?;
        Ok((table, first))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afd::AfdTrace;
    use crate::consensus::consensus_system;
    use crate::observation::observation_from_trace;
    use crate::system::Locations;

    fn tree(n: u8, outs: &[(u8, u8)]) -> ExecutionTree {
        let loc = Locations::new(n, 0).unwrap();
        let sys = consensus_system(loc, None, false).unwrap();
        let t = AfdTrace::new(n, outs.iter().map(|&(i, j)| Action::fd_omega(Loc(i), Loc(j))).collect(), true);
        ExecutionTree::new(sys, observation_from_trace(&t).unwrap())
    }

    #[test]
    fn label_metrics_for_three_locations() {
        let m = |l| label_metric(&l, 3);
        assert_eq!(m(TaskLabel::Proc(Loc(2))), 2);
        assert_eq!(m(TaskLabel::Env(Loc(2), 0)), 6);
        assert_eq!(m(TaskLabel::Fd(Loc(2))), 17);
        assert_eq!(m(TaskLabel::Chan(Loc(1), Loc(2))), 10);
        // Chan_{1,3} takes 11, so the block order puts Chan_{2,1} at 12.
        assert_eq!(m(TaskLabel::Chan(Loc(1), Loc(3))), 11);
        assert_eq!(m(TaskLabel::Chan(Loc(2), Loc(1))), 12);
        assert_eq!(m(TaskLabel::Chan(Loc(3), Loc(2))), 15);
    }

    #[test]
    fn vertex_metric_and_pairing() {
        assert_eq!(vertex_metric(None, 3), 0);
        assert_eq!(vertex_metric(Some(VertexId::new(2, 3)), 3), 11);
        assert_eq!(cantor_pair(0, 0), Some(0));
        assert_eq!(cantor_pair(1, 2), Some(8));
        assert_eq!(cantor_pair(2, 1), Some(7));
        assert_eq!(cantor_pair(u128::MAX, 1), None);
    }

    #[test]
    fn empty_tree_root_is_undecided() {
        let t = tree(2, &[]);
        let mut a = Analyzer::new(&t);
        assert_eq!(a.valence(&[]).unwrap(), Valence::Undecided);
        assert!(a.first_gadget().unwrap().is_none());
    }

    #[test]
    fn ranks_match_the_explicit_table() {
        let t = tree(2, &[(1, 1), (2, 1), (1, 1), (2, 1)]);
        let mut a = Analyzer::new(&t);
        let table = a.rank_table(100_000).unwrap();
        assert_eq!(a.non_bot_count().unwrap(), table.len() as u128);
        for (r, (_, path)) in table.iter().enumerate() {
            assert_eq!(a.rank(path).unwrap(), r as u128);
        }
    }

    #[test]
    fn root_is_bivalent_once_a_decision_fits() {
        let t = tree(2, &[(1, 1), (2, 1), (1, 1), (2, 1)]);
        let mut a = Analyzer::new(&t);
        assert_eq!(a.valence(&[]).unwrap(), Valence::Bivalent);
    }

    #[test]
    fn first_gadget_is_the_root_hook() {
        let t = tree(2, &[(1, 1), (2, 1), (1, 1), (2, 1), (1, 1)]);
        let mut a = Analyzer::new(&t);
        let g = a.first_gadget().unwrap().expect("a gadget exists");
        assert_eq!(g.gadget.kind, GadgetKind::Hook);
        assert!(g.gadget.node.is_empty());
        assert_eq!(g.gadget.l(), &TaskLabel::Env(Loc(1), 1));
        assert_eq!(g.gadget.r(), Some(&TaskLabel::Env(Loc(1), 0)));
        assert_eq!(g.ranks, (0, 2, 1));
        assert_eq!(g.metric, 35);
        assert_eq!(g.gadget.critical_location(), Ok(Loc(1)));
        let all = a.enumerate_gadgets().unwrap();
        assert_eq!(all[0], g);
    }

    #[test]
    fn mismatched_hook_locations_are_an_error() {
        let edge = |label, a: Action| TreeEdge { label, vertex: None, action: Some(a) };
        let g = Gadget {
            kind: GadgetKind::Hook,
            node: vec![],
            e_l: edge(TaskLabel::Env(Loc(1), 0), Action::propose(Loc(1), 0)),
            e_r: Some(edge(TaskLabel::Env(Loc(2), 0), Action::propose(Loc(2), 0))),
            second: edge(TaskLabel::Env(Loc(1), 0), Action::propose(Loc(1), 0)),
            v: 0,
        };
        assert_eq!(g.critical_location(), Err(GadgetError::LocationMismatch { first: Loc(1), second: Loc(2) }));
    }
}
