//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use afd_lab::afd::{AfdTrace, OmegaAutomaton};
use afd_lab::consensus::consensus_system;
use afd_lab::gadget::GadgetKind;
use afd_lab::ioa::{component, compose, run_fair, Action, ActionName, External, Loc, SchedulerPolicy, SystemState, TaskLabel};
use afd_lab::observation::{observation_from_trace, Observation, VertexId};
use afd_lab::system::{CrashAutomaton, Locations};
use afd_lab::tree::{EdgeFilter, ExecutionTree, TreeEdge, TreeNode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A run of the Ω automaton with the given crashes as a complete trace.
pub fn omega_run(n: u8, seed: u64, horizon: usize, crashes: &[(usize, u8)]) -> AfdTrace {
    let loc = Locations::new(n, n - 1).unwrap();
    let sys = compose("d", vec![component(OmegaAutomaton { locations: loc }), component(CrashAutomaton { locations: loc })]).unwrap();
    let ext: Vec<External> = crashes.iter().map(|&(turn, i)| External { turn, action: Action::crash(Loc(i)) }).collect();
    let run = run_fair(&sys, &SchedulerPolicy::seeded(seed, horizon), &ext).unwrap();
    AfdTrace::new(n, run.execution.events, true)
}

/// The first `count` outputs of `t` (and the crashes among them) as a
/// prefix trace.
pub fn first_outputs(t: &AfdTrace, count: usize) -> AfdTrace {
    let mut seen = 0;
    let events = t
        .events
        .iter()
        .take_while(|e| {
            if !e.is_crash() {
                seen += 1;
            }
            seen <= count
        })
        .cloned()
        .collect();
    AfdTrace::new(t.n, events, false)
}

pub fn observation_of(t: &AfdTrace, count: usize) -> Observation {
    observation_from_trace(&first_outputs(t, count)).unwrap()
}

/// Random events over n locations, valid or not.
pub fn random_events(r: &mut ChaCha8Rng, n: u8, len: usize) -> Vec<Action> {
    (0..len)
        .map(|_| {
            let i = Loc(r.gen_range(1..=n));
            if r.gen_bool(0.15) {
                Action::crash(i)
            } else {
                Action::fd_omega(i, Loc(r.gen_range(1..=n)))
            }
        })
        .collect()
}

/// A complete valid trace: no output after a crash at its location, every
/// live location outputs at least once.
pub fn valid_trace(r: &mut ChaCha8Rng, n: u8, len: usize) -> AfdTrace {
    let mut crashed = BTreeSet::new();
    let mut events = Vec::new();
    for _ in 0..len {
        let i = Loc(r.gen_range(1..=n));
        if r.gen_bool(0.1) && crashed.len() + 1 < n as usize {
            crashed.insert(i);
            events.push(Action::crash(i));
        } else if !crashed.contains(&i) {
            events.push(Action::fd_omega(i, Loc(r.gen_range(1..=n))));
        } else if r.gen_bool(0.3) {
            // A repeated crash is still valid.
            events.push(Action::crash(i));
        }
    }
    for i in 1..=n {
        let i = Loc(i);
        if !crashed.contains(&i) {
            events.push(Action::fd_omega(i, Loc(1)));
        }
    }
    AfdTrace::new(n, events, true)
}

/// A sampling of `t`: keep every live output and each first crash; drop
/// repeated crashes at random and cut each faulty location's outputs to a
/// random prefix.
pub fn sample(r: &mut ChaCha8Rng, t: &AfdTrace) -> AfdTrace {
    let faulty = t.faulty();
    let keep_outputs: HashMap<Loc, usize> =
        faulty.iter().map(|&i| (i, r.gen_range(0..=t.outputs_at(i).len()))).collect();
    let mut seen_crash = BTreeSet::new();
    let mut emitted: HashMap<Loc, usize> = HashMap::new();
    let mut events = Vec::new();
    for e in &t.events {
        let keep = if e.is_crash() {
            seen_crash.insert(e.loc) || r.gen_bool(0.5)
        } else if let Some(&k) = keep_outputs.get(&e.loc) {
            let c = emitted.entry(e.loc).or_default();
            *c += 1;
            *c <= k
        } else {
            true
        };
        if keep {
            events.push(e.clone());
        }
    }
    AfdTrace::new(t.n, events, t.complete)
}

pub fn label_metric(l: &TaskLabel, n: u64) -> u64 {
    match *l {
        TaskLabel::Proc(i) => i.0 as u64,
        TaskLabel::Env(i, 0) => n + 2 * i.0 as u64 - 1,
        TaskLabel::Env(i, _) => n + 2 * i.0 as u64,
        TaskLabel::Chan(i, j) => {
            let (i, j) = (i.0 as u64, j.0 as u64);
            3 * n + (n - 1) * (i - 1) + if j < i { j } else { j - 1 }
        }
        TaskLabel::Fd(i) => n * n + 2 * n + i.0 as u64,
        TaskLabel::Named(_) => unreachable!("no named tasks in the consensus system"),
    }
}

pub fn pair(a: u128, b: u128) -> u128 {
    (a + b) * (a + b + 1) / 2 + b
}

/// Level, then per-edge (vertex, label) metrics.
pub type Metric = (u64, Vec<(u64, u64)>);

/// Node metric written out from its definition.
pub fn node_metric(path: &[TreeEdge], n: u8) -> Metric {
    let vm = |v: Option<VertexId>| v.map_or(0, |v| v.index as u64 * n as u64 + v.loc.0 as u64);
    let k = path.last().and_then(|e| e.vertex).map_or(0, |v| v.index as u64);
    (path.len() as u64 + k, path.iter().map(|e| (vm(e.vertex), label_metric(&e.label, n as u64))).collect())
}

fn bit(a: &Action) -> u8 {
    match (&a.name, a.bit()) {
        (ActionName::Decide, Some(v)) => 1 << v,
        _ => 0,
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OracleGadget {
    pub kind: GadgetKind,
    pub node: Vec<TreeEdge>,
    pub e_l: TreeEdge,
    pub e_r: Option<TreeEdge>,
    pub second: TreeEdge,
    pub v: u8,
    pub metric: u128,
}

/// Brute force over the whole tree: decision values follow every edge,
/// ⊥ edges included, and every (N, l) and (N, l, r) tuple is tested.
pub struct Oracle<'t> {
    pub tree: &'t ExecutionTree,
    below: HashMap<(SystemState, Option<VertexId>, usize), u8>,
}

impl<'t> Oracle<'t> {
    pub fn new(tree: &'t ExecutionTree) -> Oracle<'t> {
        Oracle { tree, below: HashMap::new() }
    }

    /// Values decided on edges below a node with this configuration.
    fn values_below(&mut self, config: &SystemState, vertex: Option<VertexId>, remaining: usize) -> u8 {
        if remaining == 0 {
            return 0;
        }
        let key = (config.clone(), vertex, remaining);
        if let Some(&m) = self.below.get(&key) {
            return m;
        }
        let mut m = 0;
        for c in self.tree.children(config, vertex).unwrap() {
            m |= c.edge.action.as_ref().map_or(0, bit) | self.values_below(&c.config, c.vertex, remaining - 1);
        }
        self.below.insert(key, m);
        m
    }

    pub fn values(&mut self, node: &TreeNode) -> u8 {
        let own = node.path.iter().filter_map(|e| e.action.as_ref()).fold(0, |m, a| m | bit(a));
        own | self.values_below(&node.config, node.vertex, self.tree.height() - node.depth())
    }

    fn univalent(&mut self, node: &TreeNode) -> Option<u8> {
        match self.values(node) {
            1 => Some(0),
            2 => Some(1),
            _ => None,
        }
    }

    /// Every non-⊥ node, depth first.
    pub fn non_bot_nodes(&self) -> Vec<TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self.tree.root()];
        while let Some(node) = stack.pop() {
            if node.depth() < self.tree.height() {
                stack.extend(self.tree.expand(&node, EdgeFilter::NonBot).unwrap());
            }
            out.push(node);
        }
        out
    }

    pub fn gadgets(&mut self) -> Vec<OracleGadget> {
        let n = self.tree.n();
        let nodes = self.non_bot_nodes();
        let mut metrics: Vec<(Metric, Vec<TreeEdge>)> = nodes.iter().map(|x| (node_metric(&x.path, n), x.path.clone())).collect();
        metrics.sort_by(|a, b| a.0.cmp(&b.0));
        let rank: HashMap<Vec<TreeEdge>, u128> = metrics.into_iter().enumerate().map(|(r, (_, p))| (p, r as u128)).collect();
        let strip = |p: Vec<TreeEdge>| -> Vec<TreeEdge> { p.into_iter().filter(|e| e.action.is_some()).collect() };
        let h = self.tree.height();
        let mut out = Vec::new();
        for node in &nodes {
            if node.depth() >= h || self.values(node) != 3 {
                continue;
            }
            let kids = self.tree.expand(node, EdgeFilter::All).unwrap();
            let last = |c: &TreeNode| c.path.last().unwrap().clone();
            let mut found = Vec::new();
            for a in &kids {
                let ea = last(a);
                if ea.action.is_none() || !matches!(ea.label, TaskLabel::Fd(_)) {
                    continue;
                }
                let Some(v) = self.univalent(a) else { continue };
                for b in &kids {
                    let eb = last(b);
                    if eb != ea && eb.label == ea.label && eb.action.is_some() && self.univalent(b) == Some(1 - v) {
                        found.push((GadgetKind::Fork, ea.clone(), None, eb, v, b.path.clone()));
                    }
                }
            }
            if node.depth() + 2 <= h {
                for a in &kids {
                    let ea = last(a);
                    if ea.action.is_none() {
                        continue;
                    }
                    let Some(v) = self.univalent(a) else { continue };
                    for r in &kids {
                        let er = last(r);
                        if er.action.is_none() {
                            continue;
                        }
                        for rl in self.tree.expand(r, EdgeFilter::All).unwrap() {
                            let erl = last(&rl);
                            if erl.label == ea.label && self.univalent(&rl) == Some(1 - v) {
                                found.push((GadgetKind::Hook, ea.clone(), Some(er.clone()), erl, v, rl.path.clone()));
                            }
                        }
                    }
                }
            }
            for (kind, e_l, e_r, second, v, other) in found {
                let mut lower = node.path.clone();
                lower.push(e_l.clone());
                let (rn, rl, ro) = (rank[&node.path], rank[&lower], rank[&strip(other)]);
                out.push(OracleGadget { kind, node: node.path.clone(), e_l, e_r, second, v, metric: pair(rn, pair(rl, ro)) });
            }
        }
        out.sort_by_key(|g| (g.metric, g.kind));
        out
    }
}

pub fn consensus_tree(n: u8, g: Observation) -> ExecutionTree {
    ExecutionTree::new(consensus_system(Locations::new(n, 0).unwrap(), None, false).unwrap(), g)
}
