//! Observations: DAGs of detector outputs `(i, k, e)` whose edges are kept
//! transitively closed.
//!
//! Incoming-edge sets are stored behind `Arc`s. A vertex's incoming edges
//! never change once it exists anywhere, so copies exchanged between
//! locations share them and unions compare them by pointer first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::ControlFlow;
use std::sync::Arc;

use thiserror::Error;

use crate::afd::{check_omega_f, first_post_crash_output, AfdTrace, ParseError, Verdict};
use crate::ioa::{Action, Loc};
use crate::text::{action_body, parse_action_body, parse_loc};

/// Default cap on exhaustive enumerations over an observation.
pub const DEFAULT_BOUND: usize = 8;

#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct VertexId {
    pub loc: Loc,
    pub index: u32,
}

impl VertexId {
    pub fn new(loc: u8, index: u32) -> VertexId {
        VertexId { loc: Loc(loc), index }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.loc, self.index)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Vertex {
    pub id: VertexId,
    pub action: Action,
}

impl Vertex {
    pub fn new(index: u32, action: Action) -> Vertex {
        Vertex { id: VertexId { loc: action.loc, index }, action }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Property {
    /// At most one vertex per (location, index).
    UniqueVertex,
    /// Indices at each location are 1..=k with no gaps.
    IndexClosure,
    /// (i,k) → (i,k+1) whenever both exist.
    SuccessorEdge,
    /// Edges are transitively closed.
    Transitivity,
    Acyclic,
    /// A vertex's action occurs at the vertex's location.
    ActionLocation,
    /// An edge endpoint is not a vertex.
    DanglingEdge,
}

#[derive(Clone, PartialEq, Eq, Debug, Error)]
#[error("{property:?} violated at {witness:?}")]
pub struct ObservationViolation {
    pub property: Property,
    pub witness: Vec<VertexId>,
}

#[derive(Clone, PartialEq, Eq, Debug, Error)]
pub enum ObservationError {
    #[error("vertex {vertex} inserted with index {got}; expected {expected}")]
    WrongIndex { vertex: VertexId, expected: u32, got: u32 },
    #[error("trace is not a valid sequence (event {0} follows its location's crash)")]
    InvalidTrace(usize),
    #[error("enumeration over {size} vertices exceeds the bound of {bound}")]
    Capacity { size: usize, bound: usize },
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum ConflictKind {
    /// Same (i, k) with different actions.
    VertexAction,
    /// A shared vertex has different incoming edges on the two sides.
    IncomingEdges,
    /// The observations are over different location sets.
    Universe,
}

#[derive(Clone, PartialEq, Eq, Debug, Error)]
#[error("union conflict {kind:?} at {witness:?}")]
pub struct UnionConflict {
    pub kind: ConflictKind,
    pub witness: Option<VertexId>,
}

type Preds = Arc<BTreeSet<VertexId>>;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Observation {
    n: u8,
    vertices: BTreeMap<VertexId, Action>,
    preds: BTreeMap<VertexId, Preds>,
}

impl Observation {
    pub fn empty(n: u8) -> Observation {
        Observation { n, vertices: BTreeMap::new(), preds: BTreeMap::new() }
    }

    /// Build a raw graph, which need not be an observation. Only duplicate
    /// (i, k) pairs with different actions and dangling edges are refused
    /// here, because the representation cannot hold them; everything else is
    /// left for [`Observation::validate`].
    pub fn from_parts(
        n: u8,
        vertices: impl IntoIterator<Item = Vertex>,
        edges: impl IntoIterator<Item = (VertexId, VertexId)>,
    ) -> Result<Observation, ObservationViolation> {
        let mut g = Observation::empty(n);
        for v in vertices {
            match g.vertices.get(&v.id) {
                Some(a) if *a != v.action => {
                    return Err(ObservationViolation { property: Property::UniqueVertex, witness: vec![v.id] })
                }
                _ => {
                    g.vertices.insert(v.id, v.action);
                }
            }
        }
        let mut preds: BTreeMap<VertexId, BTreeSet<VertexId>> = g.vertices.keys().map(|&v| (v, BTreeSet::new())).collect();
        for (u, v) in edges {
            if !g.vertices.contains_key(&u) || !g.vertices.contains_key(&v) {
                return Err(ObservationViolation { property: Property::DanglingEdge, witness: vec![u, v] });
            }
            preds.get_mut(&v).expect("checked above").insert(u);
        }
        g.preds = preds.into_iter().map(|(v, p)| (v, Arc::new(p))).collect();
        Ok(g)
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.vertices.contains_key(&v)
    }

    pub fn action(&self, v: VertexId) -> Option<&Action> {
        self.vertices.get(&v)
    }

    pub fn vertex_ids(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.vertices.keys().copied()
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.vertices.iter().map(|(&id, a)| Vertex { id, action: a.clone() })
    }

    /// Incoming-edge set of `v` (empty for non-vertices).
    pub fn preds(&self, v: VertexId) -> &BTreeSet<VertexId> {
        static EMPTY: BTreeSet<VertexId> = BTreeSet::new();
        self.preds.get(&v).map_or(&EMPTY, |p| p)
    }

    pub fn has_edge(&self, u: VertexId, v: VertexId) -> bool {
        self.preds(v).contains(&u)
    }

    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        self.preds.iter().flat_map(|(&v, p)| p.iter().map(move |&u| (u, v)))
    }

    pub fn edge_count(&self) -> usize {
        self.preds.values().map(|p| p.len()).sum()
    }

    pub fn vertices_at(&self, i: Loc) -> impl Iterator<Item = VertexId> + '_ {
        self.vertices
            .range(VertexId { loc: i, index: 0 }..=VertexId { loc: i, index: u32::MAX })
            .map(|(&v, _)| v)
    }

    pub fn max_index(&self, i: Loc) -> u32 {
        self.vertices_at(i).last().map_or(0, |v| v.index)
    }

    /// Vertices at `i` with an edge from `v`.
    pub fn successors_at(&self, v: VertexId, i: Loc) -> Vec<VertexId> {
        self.vertices_at(i).filter(|&w| self.has_edge(v, w)).collect()
    }

    pub fn has_out_edge(&self, v: VertexId) -> bool {
        self.preds.values().any(|p| p.contains(&v))
    }

    /// Properties 1, 2, 3 and 5 plus acyclicity; the first failure wins.
    pub fn validate(&self) -> Result<(), ObservationViolation> {
        let fail = |property, witness| Err(ObservationViolation { property, witness });
        for (&v, a) in &self.vertices {
            if a.loc != v.loc {
                return fail(Property::ActionLocation, vec![v]);
            }
        }
        for i in (1..=self.n).map(Loc) {
            for (pos, v) in self.vertices_at(i).enumerate() {
                if v.index != pos as u32 + 1 {
                    let missing = VertexId { loc: i, index: pos as u32 + 1 };
                    return fail(Property::IndexClosure, vec![v, missing]);
                }
            }
        }
        if let Some(&v) = self.vertices.keys().find(|v| v.loc.0 == 0 || v.loc.0 > self.n) {
            return fail(Property::ActionLocation, vec![v]);
        }
        for &v in self.vertices.keys() {
            let next = VertexId { loc: v.loc, index: v.index + 1 };
            if self.contains(next) && !self.has_edge(v, next) {
                return fail(Property::SuccessorEdge, vec![v, next]);
            }
        }
        for (&w, p) in &self.preds {
            for &v in p.iter() {
                if let Some(&u) = self.preds(v).iter().find(|u| !p.contains(u)) {
                    return fail(Property::Transitivity, vec![u, v, w]);
                }
            }
        }
        // With transitivity in place a cycle shows up as a self-loop.
        if let Some((&v, _)) = self.preds.iter().find(|(v, p)| p.contains(v)) {
            return fail(Property::Acyclic, vec![v]);
        }
        Ok(())
    }

    /// Add `v` with an edge from every existing vertex.
    pub fn insert(&self, v: Vertex) -> Result<Observation, ObservationError> {
        let expected = self.max_index(v.id.loc) + 1;
        if v.id.index != expected || v.action.loc != v.id.loc {
            return Err(ObservationError::WrongIndex { vertex: v.id, expected, got: v.id.index });
        }
        let mut g = self.clone();
        g.preds.insert(v.id, Arc::new(self.vertices.keys().copied().collect()));
        g.vertices.insert(v.id, v.action);
        Ok(g)
    }

    /// Vertex and edge union. When neither conflict condition applies, the
    /// union of two transitively closed observations is already closed: a
    /// path u → v → w with the edges on different sides passes through a
    /// shared v whose incoming edges agree.
    pub fn union(&self, other: &Observation) -> Result<Observation, UnionConflict> {
        if self.n != other.n {
            return Err(UnionConflict { kind: ConflictKind::Universe, witness: None });
        }
        let mut g = self.clone();
        for (&v, a) in &other.vertices {
            match self.vertices.get(&v) {
                Some(mine) if mine != a => {
                    return Err(UnionConflict { kind: ConflictKind::VertexAction, witness: Some(v) })
                }
                Some(_) => {
                    let (p, q) = (&self.preds[&v], &other.preds[&v]);
                    if !Arc::ptr_eq(p, q) && p != q {
                        return Err(UnionConflict { kind: ConflictKind::IncomingEdges, witness: Some(v) });
                    }
                }
                None => {
                    g.vertices.insert(v, a.clone());
                    g.preds.insert(v, other.preds[&v].clone());
                }
            }
        }
        Ok(g)
    }

    /// `self ⊑ g`: a subgraph of `g` whose vertices keep their incoming edges.
    pub fn is_prefix_of(&self, g: &Observation) -> bool {
        self.n == g.n
            && self.vertices.iter().all(|(v, a)| {
                g.vertices.get(v) == Some(a) && {
                    let (p, q) = (&self.preds[v], &g.preds[v]);
                    Arc::ptr_eq(p, q) || p == q
                }
            })
    }

    /// Vertices whose predecessors all lie in `chosen`.
    fn available<'a>(&'a self, chosen: &'a BTreeSet<VertexId>) -> impl Iterator<Item = VertexId> + 'a {
        self.preds
            .iter()
            .filter(move |(v, p)| !chosen.contains(v) && p.iter().all(|u| chosen.contains(u)))
            .map(|(&v, _)| v)
    }

    /// Visit every topological ordering until `visit` breaks.
    pub fn for_each_topological_sort(
        &self,
        bound: usize,
        mut visit: impl FnMut(&[VertexId]) -> ControlFlow<()>,
    ) -> Result<ControlFlow<()>, ObservationError> {
        if self.len() > bound {
            return Err(ObservationError::Capacity { size: self.len(), bound });
        }
        fn go(
            g: &Observation,
            chosen: &mut BTreeSet<VertexId>,
            order: &mut Vec<VertexId>,
            visit: &mut dyn FnMut(&[VertexId]) -> ControlFlow<()>,
        ) -> ControlFlow<()> {
            if order.len() == g.len() {
                return visit(order);
            }
            let next: Vec<VertexId> = g.available(chosen).collect();
            for v in next {
                chosen.insert(v);
                order.push(v);
                let flow = go(g, chosen, order, visit);
                order.pop();
                chosen.remove(&v);
                flow?;
            }
            ControlFlow::Continue(())
        }
        Ok(go(self, &mut BTreeSet::new(), &mut Vec::new(), &mut visit))
    }

    pub fn topological_sorts(&self, bound: usize) -> Result<Vec<Vec<VertexId>>, ObservationError> {
        let mut all = Vec::new();
        let _ = self.for_each_topological_sort(bound, |s| {
            all.push(s.to_vec());
            ControlFlow::Continue(())
        })?;
        Ok(all)
    }

    /// Maximal paths: chains that cannot be extended at either end nor
    /// refined by inserting a vertex between two consecutive members.
    pub fn branches(&self, bound: usize) -> Result<Vec<Vec<VertexId>>, ObservationError> {
        if self.len() > bound {
            return Err(ObservationError::Capacity { size: self.len(), bound });
        }
        let covers = |u: VertexId, v: VertexId| {
            self.has_edge(u, v) && !self.preds(v).iter().any(|&w| self.has_edge(u, w))
        };
        let ids: Vec<VertexId> = self.vertex_ids().collect();
        let sinks: BTreeSet<VertexId> = ids.iter().copied().filter(|&v| !self.has_out_edge(v)).collect();
        let mut out = Vec::new();
        let mut stack: Vec<Vec<VertexId>> = ids.iter().filter(|&&v| self.preds(v).is_empty()).map(|&v| vec![v]).collect();
        while let Some(path) = stack.pop() {
            let last = *path.last().expect("paths are nonempty");
            if sinks.contains(&last) {
                out.push(path);
                continue;
            }
            for &w in ids.iter().rev().filter(|&&w| covers(last, w)) {
                let mut p = path.clone();
                p.push(w);
                stack.push(p);
            }
        }
        out.sort();
        Ok(out)
    }

    /// The first `size` vertices picked greedily: repeatedly take the
    /// available vertex with the least `k·n + i`. The result is a prefix.
    pub fn greedy_prefix(&self, size: usize) -> Observation {
        let n = self.n as u64;
        let mut chosen = BTreeSet::new();
        while chosen.len() < size.min(self.len()) {
            let v = self
                .available(&chosen)
                .min_by_key(|v| v.index as u64 * n + v.loc.0 as u64)
                .expect("an acyclic graph always has an available vertex");
            chosen.insert(v);
        }
        Observation {
            n: self.n,
            vertices: chosen.iter().map(|v| (*v, self.vertices[v].clone())).collect(),
            preds: chosen.iter().map(|v| (*v, self.preds[v].clone())).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("obs n={}\n", self.n);
        for (v, a) in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", v.loc, v.index, action_body(a)));
        }
        for (u, v) in self.edges() {
            out.push_str(&format!("e {},{} {},{}\n", u.loc, u.index, v.loc, v.index));
        }
        out
    }

    /// Parse the `obs` format. The result is a raw graph; call
    /// [`Observation::validate`] to check it.
    pub fn parse(text: &str) -> Result<Observation, ParseError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let err = |line: usize, message: String| ParseError { line: line + 1, message };
        let (hl, header) = lines.next().ok_or(ParseError { line: 1, message: "empty observation file".into() })?;
        let n = header
            .trim()
            .strip_prefix("obs n=")
            .and_then(|s| s.parse::<u8>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| err(hl, "expected `obs n=<n>`".into()))?;
        let mut vertices = Vec::new();
        let mut edges = Vec::new();
        let vid = |ln: usize, s: &str| -> Result<VertexId, ParseError> {
            let (i, k) = s.split_once(',').ok_or_else(|| err(ln, format!("bad vertex `{s}`")))?;
            let loc = parse_loc(i).map_err(|m| err(ln, m))?;
            let index = k.parse::<u32>().map_err(|_| err(ln, format!("bad index `{k}`")))?;
            Ok(VertexId { loc, index })
        };
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["v", i, k, body] => {
                    let loc = parse_loc(i).map_err(|m| err(ln, m))?;
                    let index = k.parse::<u32>().map_err(|_| err(ln, format!("bad index `{k}`")))?;
                    let action = parse_action_body(body, loc).map_err(|m| err(ln, m))?;
                    vertices.push(Vertex { id: VertexId { loc, index }, action });
                }
                ["e", u, v] => edges.push((vid(ln, u)?, vid(ln, v)?)),
                _ => return Err(err(ln, format!("unrecognised line `{line}`"))),
            }
        }
        Observation::from_parts(n, vertices, edges).map_err(|v| ParseError { line: 0, message: v.to_string() })
    }
}

/// Insert the outputs of a valid trace in order; the x-th output at i
/// becomes (i, x, e).
pub fn observation_from_trace(t: &AfdTrace) -> Result<Observation, ObservationError> {
    if let Some(at) = first_post_crash_output(&t.events) {
        return Err(ObservationError::InvalidTrace(at));
    }
    let mut g = Observation::empty(t.n);
    for e in t.events.iter().filter(|e| !e.is_crash()) {
        let k = g.max_index(e.loc) + 1;
        g = g.insert(Vertex::new(k, e.clone()))?;
    }
    Ok(g)
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum CompatMode {
    /// Enumerate topological sorts (capped).
    Exhaustive { bound: usize },
    /// Match outputs one at a time. This is exact: every location's vertices
    /// form a chain, so the x-th output at i can only be matched with (i, x).
    Streaming,
}

/// Is `t` restricted to outputs the event sequence of a topological sort of
/// `g`?
pub fn is_compatible(t: &AfdTrace, g: &Observation, mode: CompatMode) -> Result<bool, ObservationError> {
    let outputs: Vec<&Action> = t.events.iter().filter(|e| !e.is_crash()).collect();
    match mode {
        CompatMode::Exhaustive { bound } => {
            if outputs.len() != g.len() {
                // Still honour the capacity contract.
                if g.len() > bound {
                    return Err(ObservationError::Capacity { size: g.len(), bound });
                }
                return Ok(false);
            }
            let flow = g.for_each_topological_sort(bound, |order| {
                if order.iter().zip(&outputs).all(|(v, e)| g.action(*v) == Some(*e)) {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?;
            Ok(flow.is_break())
        }
        CompatMode::Streaming => {
            if outputs.len() != g.len() {
                return Ok(false);
            }
            let mut placed = BTreeSet::new();
            let mut next_index: BTreeMap<Loc, u32> = BTreeMap::new();
            for e in outputs {
                let k = next_index.entry(e.loc).or_insert(0);
                *k += 1;
                let v = VertexId { loc: e.loc, index: *k };
                if g.action(v) != Some(e) || !g.preds(v).iter().all(|u| placed.contains(u)) {
                    return Ok(false);
                }
                placed.insert(v);
            }
            Ok(true)
        }
    }
}

/// Does some trace of Ω_f have its outputs in a topological order of `g`?
///
/// Candidate traces are a topological sort followed by crashes of a subset
/// of locations (appending crashes never breaks validity). A complete `g` is
/// the whole observation of a finished run, so locations with vertices are
/// taken to be live and only absent locations may crash. In prefix mode any
/// location may still crash later; failing all candidates there only means
/// liveness is unresolved.
pub fn viable_for_omega_f(g: &Observation, f: usize, complete: bool, bound: usize) -> Result<Verdict, ObservationError> {
    let present: BTreeSet<Loc> = g.vertex_ids().map(|v| v.loc).collect();
    let crashable: Vec<Loc> = (1..=g.n()).map(Loc).filter(|i| !complete || !present.contains(i)).collect();
    let mut found = false;
    let _ = g.for_each_topological_sort(bound, |order| {
        for mask in 0u32..(1 << crashable.len()) {
            let mut events: Vec<Action> = order.iter().map(|v| g.action(*v).expect("sorted vertex").clone()).collect();
            events.extend(crashable.iter().enumerate().filter(|(b, _)| mask & (1 << b) != 0).map(|(_, &i)| Action::crash(i)));
            if check_omega_f(&AfdTrace::new(g.n(), events, true), f).holds() {
                found = true;
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(match (found, complete) {
        (true, _) => Verdict::Holds,
        (false, true) => Verdict::violated("no topological sort with crash placements lies in the detector"),
        (false, false) => Verdict::Undetermined("no witness yet; later outputs may still stabilize".into()),
    })
}
