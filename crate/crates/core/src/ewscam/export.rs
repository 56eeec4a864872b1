use std::fmt::Write;

use serde::Serialize;

use super::CondensedTree;
use crate::Result;

/// Graphviz rendering; selected clusters are drawn with a double outline.
pub fn tree_to_dot(tree: &CondensedTree) -> String {
    let mut s = String::from("digraph condensed {\n  node [shape=ellipse];\n");
    for n in &tree.nodes {
        let shape = if n.selected { ", peripheries=2" } else { "" };
        let _ = writeln!(
            s,
            "  n{} [label=\"{}\\nsize {}\\nλ {:.4}..{:.4}\\nstab {:.4}\"{}];",
            n.id, n.id, n.size, n.lambda_birth, n.lambda_death, n.stability, shape
        );
    }
    for n in &tree.nodes {
        if let Some(p) = n.parent {
            let _ = writeln!(s, "  n{p} -> n{};", n.id);
        }
    }
    s.push_str("}\n");
    s
}

#[derive(Serialize)]
struct NodeRecord {
    id: usize,
    parent: Option<usize>,
    lambda_birth: f64,
    lambda_death: f64,
    size: usize,
    stability: f64,
    n_fallen: usize,
    selected: bool,
}

#[derive(Serialize)]
struct TreeRecord {
    n_points: usize,
    min_cluster_size: usize,
    nodes: Vec<NodeRecord>,
}

pub fn tree_to_json(tree: &CondensedTree) -> Result<String> {
    let rec = TreeRecord {
        n_points: tree.n_points,
        min_cluster_size: tree.min_cluster_size,
        nodes: tree
            .nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id,
                parent: n.parent,
                lambda_birth: n.lambda_birth,
                lambda_death: n.lambda_death,
                size: n.size,
                stability: n.stability,
                n_fallen: n.fallen.len(),
                selected: n.selected,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&rec)?)
}
