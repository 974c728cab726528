//! The execution tree R^G of a system S over a finite observation G.
//!
//! Nodes are never stored; a node is its path from the root plus the two
//! tags the construction carries along (vertex tag and configuration tag).
//! Everything below a node is a function of `(config, vertex, remaining
//! height)`, which is what the analyses memoize on.

use std::fmt;

use crate::ioa::{Action, Composition, Execution, KernelError, Loc, SystemState, TaskLabel};
use crate::observation::{Observation, VertexId};
use crate::system::{BuiltSystem, SystemLayout};

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct TreeEdge {
    pub label: TaskLabel,
    /// `None` is the null vertex (⊥,0,⊥).
    pub vertex: Option<VertexId>,
    /// `None` is ⊥.
    pub action: Option<Action>,
}

impl fmt::Display for TreeEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.vertex.map_or("⊥".to_string(), |v| v.to_string());
        match &self.action {
            Some(a) => write!(f, "{} [{v}] {a}", self.label),
            None => write!(f, "{} [{v}] ⊥", self.label),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TreeNode {
    pub path: Vec<TreeEdge>,
    pub vertex: Option<VertexId>,
    pub config: SystemState,
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        self.path.len()
    }

    /// Index of the vertex tag; 0 for the null vertex.
    pub fn k(&self) -> u32 {
        self.vertex.map_or(0, |v| v.index)
    }

    pub fn is_non_bot(&self) -> bool {
        self.path.iter().all(|e| e.action.is_some())
    }

    pub fn key(&self) -> NodeKey {
        NodeKey { config: self.config.clone(), vertex: self.vertex }
    }

    /// The node with every ⊥ edge removed from its path. It has the same
    /// tags and execution and is reached through non-⊥ edges only.
    pub fn canonical_path(&self) -> Vec<TreeEdge> {
        self.path.iter().filter(|e| e.action.is_some()).cloned().collect()
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct NodeKey {
    pub config: SystemState,
    pub vertex: Option<VertexId>,
}

/// One outgoing edge with the child's tags.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Child {
    pub edge: TreeEdge,
    pub vertex: Option<VertexId>,
    pub config: SystemState,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EdgeFilter {
    All,
    NonBot,
}

/// R^G for a built system and an observation; height |V(G)|.
#[derive(Clone, Debug)]
pub struct ExecutionTree {
    system: BuiltSystem,
    g: Observation,
    labels: Vec<TaskLabel>,
}

impl ExecutionTree {
    pub fn new(system: BuiltSystem, g: Observation) -> ExecutionTree {
        let labels = system.system.task_labels();
        ExecutionTree { system, g, labels }
    }

    pub fn observation(&self) -> &Observation {
        &self.g
    }

    pub fn system(&self) -> &Composition {
        &self.system.system
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.system.layout
    }

    pub fn n(&self) -> u8 {
        self.system.layout.locations.n
    }

    pub fn height(&self) -> usize {
        self.g.len()
    }

    pub fn root(&self) -> TreeNode {
        TreeNode { path: Vec::new(), vertex: None, config: self.system.system.initial_state() }
    }

    /// Does G allow location `i` to take another step after `vertex`?
    pub fn has_successor_at(&self, vertex: Option<VertexId>, i: Loc) -> bool {
        match vertex {
            None => self.g.vertices_at(i).next().is_some(),
            Some(v) => self.g.vertices_at(i).any(|w| self.g.has_edge(v, w)),
        }
    }

    /// The outgoing edges of any node tagged `(config, vertex)`: one per
    /// task of S in task order, then the detector edges per location.
    pub fn children(&self, config: &SystemState, vertex: Option<VertexId>) -> Result<Vec<Child>, KernelError> {
        let sys = &self.system.system;
        let mut out = Vec::with_capacity(self.labels.len() + self.n() as usize);
        for (task, label) in self.labels.iter().enumerate() {
            let allowed = match label {
                TaskLabel::Chan(..) => true,
                other => other.loc().is_some_and(|i| self.has_successor_at(vertex, i)),
            };
            let action = if allowed { sys.enabled_action(config, task)? } else { None };
            let config = match &action {
                Some(a) => sys.apply(config, a)?,
                None => config.clone(),
            };
            out.push(Child { edge: TreeEdge { label: label.clone(), vertex, action }, vertex, config });
        }
        for i in self.system.layout.locations.all() {
            let targets: Vec<VertexId> = match vertex {
                None => self.g.vertices_at(i).collect(),
                Some(v) => self.g.successors_at(v, i),
            };
            if targets.is_empty() {
                let edge = TreeEdge { label: TaskLabel::Fd(i), vertex, action: None };
                out.push(Child { edge, vertex, config: config.clone() });
            }
            for w in targets {
                let a = self.g.action(w).expect("target is a vertex of G").clone();
                let next = sys.apply(config, &a)?;
                let edge = TreeEdge { label: TaskLabel::Fd(i), vertex: Some(w), action: Some(a) };
                out.push(Child { edge, vertex: Some(w), config: next });
            }
        }
        Ok(out)
    }

    pub fn expand(&self, node: &TreeNode, filter: EdgeFilter) -> Result<Vec<TreeNode>, KernelError> {
        if node.depth() >= self.height() {
            return Ok(Vec::new());
        }
        Ok(self
            .children(&node.config, node.vertex)?
            .into_iter()
            .filter(|c| filter == EdgeFilter::All || c.edge.action.is_some())
            .map(|c| {
                let mut path = node.path.clone();
                path.push(c.edge);
                TreeNode { path, vertex: c.vertex, config: c.config }
            })
            .collect())
    }

    /// Follow a path of (label, vertex tag) pairs from the root.
    pub fn node_at(&self, steps: &[(TaskLabel, Option<VertexId>)]) -> Result<Option<TreeNode>, KernelError> {
        let mut node = self.root();
        for (label, vertex) in steps {
            let next = self.expand(&node, EdgeFilter::All)?;
            match next.into_iter().find(|c| {
                let e = c.path.last().expect("child has an edge");
                &e.label == label && &e.vertex == vertex
            }) {
                Some(c) => node = c,
                None => return Ok(None),
            }
        }
        Ok(Some(node))
    }

    /// Replay the non-⊥ action tags of the path.
    pub fn exe(&self, node: &TreeNode) -> Result<Execution, KernelError> {
        let sys = &self.system.system;
        let mut ex = Execution::null(sys.initial_state());
        for a in node.path.iter().filter_map(|e| e.action.as_ref()) {
            let next = sys.apply(ex.last_state(), a)?;
            ex.push(a.clone(), next);
        }
        Ok(ex)
    }

    pub fn is_post_crash(&self, node: &TreeNode, i: Loc) -> bool {
        !self.has_successor_at(node.vertex, i)
    }

    /// `a ~_i b`: only the process at `i` can tell the two apart, and what
    /// `i` has in transit in `a` is a prefix of what it has in `b`.
    pub fn similar_modulo(&self, a: &TreeNode, b: &TreeNode, i: Loc) -> bool {
        if a.vertex != b.vertex {
            return false;
        }
        let lay = &self.system.layout;
        let (ca, cb) = (&a.config, &b.config);
        for j in lay.locations.all().filter(|&j| j != i) {
            if ca.part(lay.proc(j)) != cb.part(lay.proc(j)) || lay.env_part(ca, j) != lay.env_part(cb, j) {
                return false;
            }
        }
        for (&(from, to), &idx) in &lay.channels {
            if from != i && to != i && ca.part(idx) != cb.part(idx) {
                return false;
            }
            if from == i {
                let qa = &ca.get::<crate::system::ChannelState>(idx).queue;
                let qb = &cb.get::<crate::system::ChannelState>(idx).queue;
                if qa.len() > qb.len() || !qa.iter().zip(qb).all(|(x, y)| x == y) {
                    return false;
                }
            }
        }
        true
    }
}
