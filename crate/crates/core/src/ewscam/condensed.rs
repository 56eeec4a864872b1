use serde::{Deserialize, Serialize};

use super::LinkageTree;

/// Guard for zero distances, which would give an infinite λ.
const MIN_DISTANCE: f64 = 1e-12;

fn lambda_of(distance: f64) -> f64 {
    1.0 / distance.max(MIN_DISTANCE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub lambda_birth: f64,
    pub lambda_death: f64,
    pub size: usize,
    pub stability: f64,
    pub children: Vec<usize>,
    /// Points leaving this node before it dies, with the λ they leave at.
    pub fallen: Vec<(usize, f64)>,
    pub selected: bool,
}

impl CondensedNode {
    fn new(id: usize, parent: Option<usize>, lambda_birth: f64, size: usize) -> Self {
        Self {
            id,
            parent,
            lambda_birth,
            lambda_death: lambda_birth,
            size,
            stability: 0.0,
            children: Vec::new(),
            fallen: Vec::new(),
            selected: false,
        }
    }
}

/// Cluster hierarchy. Node 0 is the root, born at λ = 0 over all points;
/// children always have larger ids than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedTree {
    pub n_points: usize,
    pub min_cluster_size: usize,
    pub nodes: Vec<CondensedNode>,
}

impl CondensedTree {
    pub fn root(&self) -> &CondensedNode {
        &self.nodes[0]
    }

    /// Ids of `id` and all its descendants.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            out.push(x);
            stack.extend(self.nodes[x].children.iter().rev());
        }
        out
    }

    pub fn selected(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.selected).map(|n| n.id).collect()
    }
}

/// Children of a linkage node, with chains of merges at the same distance
/// flattened into one multi-way split.
fn split_children(linkage: &LinkageTree, node: usize) -> (Vec<usize>, f64) {
    let n = linkage.n_points;
    let d = linkage.merges[node - n].distance;
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x >= n && linkage.merges[x - n].distance == d {
            let m = &linkage.merges[x - n];
            stack.push(m.b);
            stack.push(m.a);
        } else {
            out.push(x);
        }
    }
    out.sort_unstable();
    (out, lambda_of(d))
}

/// Walks the hierarchy from the top. At each split, parts with at least
/// `min_cluster_size` points survive; two or more survivors become new child
/// clusters, a single survivor continues its parent, and the points of the
/// remaining parts leave at that λ. Separate components split off the root
/// at λ = 0.
pub fn condense(linkage: &LinkageTree, min_cluster_size: usize) -> CondensedTree {
    let mut nodes = vec![CondensedNode::new(0, None, 0.0, linkage.n_points)];
    let mut stack: Vec<(Vec<usize>, f64, usize)> = vec![(linkage.roots(), 0.0, 0)];
    while let Some((parts, lambda, cid)) = stack.pop() {
        let (big, small): (Vec<usize>, Vec<usize>) = parts.into_iter().partition(|&c| linkage.size(c) >= min_cluster_size);
        for s in small {
            nodes[cid].fallen.extend(linkage.points(s).into_iter().map(|p| (p, lambda)));
        }
        match big.len() {
            0 => nodes[cid].lambda_death = lambda,
            1 => {
                let (parts, next) = split_children(linkage, big[0]);
                stack.push((parts, next, cid));
            }
            _ => {
                nodes[cid].lambda_death = lambda;
                let mut pending = Vec::with_capacity(big.len());
                for c in big {
                    let id = nodes.len();
                    nodes.push(CondensedNode::new(id, Some(cid), lambda, linkage.size(c)));
                    nodes[cid].children.push(id);
                    pending.push((c, id));
                }
                for (c, id) in pending.into_iter().rev() {
                    let (parts, next) = split_children(linkage, c);
                    stack.push((parts, next, id));
                }
            }
        }
    }
    for i in 0..nodes.len() {
        let birth = nodes[i].lambda_birth;
        let from_points: f64 = nodes[i].fallen.iter().map(|&(_, l)| l - birth).sum();
        let from_children: f64 = nodes[i]
            .children
            .iter()
            .map(|&c| nodes[c].size as f64 * (nodes[c].lambda_birth - birth))
            .sum();
        nodes[i].stability = from_points + from_children;
    }
    CondensedTree {
        n_points: linkage.n_points,
        min_cluster_size,
        nodes,
    }
}

/// Excess-of-mass selection. A node is kept when its own stability is at
/// least that of the best selection among its descendants; the root is only
/// eligible when it never split. Points that leave a selected cluster, or
/// any of its descendants, at λ > 0 get its label; the rest are noise.
/// Labels are numbered by each cluster's smallest point.
pub fn select_clusters(tree: &mut CondensedTree) -> Vec<i64> {
    select_clusters_above(tree, f64::INFINITY)
}

/// Excess-of-mass selection in which no cluster born above `max_birth_lambda`
/// is kept on its own: such a selection is replaced by its closest ancestor
/// born at or below that λ. The root is reached only when the points form a
/// single component, since separate components are born at λ = 0.
pub fn select_clusters_above(tree: &mut CondensedTree, max_birth_lambda: f64) -> Vec<i64> {
    let k = tree.nodes.len();
    let mut best = vec![0.0; k];
    for i in (0..k).rev() {
        let node = &tree.nodes[i];
        let below: f64 = node.children.iter().map(|&c| best[c]).sum();
        let keep = node.children.is_empty() || (i != 0 && node.stability >= below);
        best[i] = if keep { node.stability } else { below };
        if keep {
            for d in tree.subtree(i) {
                tree.nodes[d].selected = false;
            }
        }
        tree.nodes[i].selected = keep;
    }
    for id in tree.selected() {
        let mut a = id;
        while a != 0 && tree.nodes[a].lambda_birth > max_birth_lambda {
            a = tree.nodes[a].parent.expect("non-root node has a parent");
        }
        if a != id && !tree.nodes[a].selected {
            for d in tree.subtree(a) {
                tree.nodes[d].selected = false;
            }
            tree.nodes[a].selected = true;
        }
    }

    let mut clusters: Vec<Vec<usize>> = tree
        .selected()
        .into_iter()
        .map(|id| {
            let mut pts: Vec<usize> = tree
                .subtree(id)
                .into_iter()
                .flat_map(|d| tree.nodes[d].fallen.iter().filter(|&&(_, l)| l > 0.0).map(|&(p, _)| p))
                .collect();
            pts.sort_unstable();
            pts
        })
        .filter(|pts| !pts.is_empty())
        .collect();
    clusters.sort();
    let mut labels = vec![crate::NOISE; tree.n_points];
    for (label, pts) in clusters.iter().enumerate() {
        for &p in pts {
            labels[p] = label as i64;
        }
    }
    labels
}
