//! Graphviz renderings of observations and tree slices.

use std::fmt::Write;

use crate::ioa::KernelError;
use crate::observation::Observation;
use crate::text::action_body;
use crate::tree::{EdgeFilter, ExecutionTree, TreeNode};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Vertices as `i:k`. Covering edges are solid; edges implied by
/// transitivity are dashed.
pub fn observation_dot(g: &Observation) -> String {
    let mut out = String::from("digraph observation {\n");
    for v in g.vertices() {
        let id = v.id.to_string();
        let _ = writeln!(out, "  {} [label={}];", quote(&id), quote(&format!("{id} {}", action_body(&v.action))));
    }
    for (u, v) in g.edges() {
        let covering = !g.preds(v).iter().any(|&w| g.has_edge(u, w));
        let style = if covering { "" } else { " [style=dashed]" };
        let _ = writeln!(out, "  {} -> {}{style};", quote(&u.to_string()), quote(&v.to_string()));
    }
    out.push_str("}\n");
    out
}

/// The top `levels` levels of the tree, the root being level 1. Every
/// edge is drawn, ⊥ edges dotted.
pub fn tree_dot(tree: &ExecutionTree, levels: usize) -> Result<String, KernelError> {
    let mut out = String::from("digraph tree {\n");
    if levels == 0 {
        out.push_str("}\n");
        return Ok(out);
    }
    let _ = writeln!(out, "  n0 [label=\"⊤\"];");
    let mut next_id = 1usize;
    let mut frontier: Vec<(usize, TreeNode)> = vec![(0, tree.root())];
    for _ in 1..levels {
        let mut deeper = Vec::new();
        for (pid, node) in &frontier {
            for child in tree.expand(node, EdgeFilter::All)? {
                let id = next_id;
                next_id += 1;
                let e = child.path.last().expect("child has an edge");
                let v = e.vertex.map_or("⊥".to_string(), |v| v.to_string());
                let _ = writeln!(out, "  n{id} [label={}];", quote(&v));
                let tag = e.action.as_ref().map_or("⊥".to_string(), |a| a.to_string());
                let style = if e.action.is_none() { ", style=dotted" } else { "" };
                let _ = writeln!(out, "  n{pid} -> n{id} [label={}{style}];", quote(&format!("{} / {tag}", e.label)));
                deeper.push((id, child));
            }
        }
        frontier = deeper;
    }
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_observation_has_no_nodes() {
        assert_eq!(observation_dot(&Observation::empty(2)), "digraph observation {\n}\n");
    }
}
