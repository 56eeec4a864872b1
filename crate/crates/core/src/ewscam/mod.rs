//! Edge-weight-based hierarchical clustering of scored track graphs.
//!
//! Edge probabilities become distances through `w = atanh(1 − p)/p`. A
//! Kruskal spanning forest over the surviving edges is replayed as a
//! single-linkage hierarchy, condensed by minimum cluster size, and the
//! flat clustering is read off by excess-of-mass stability.
//!
//! Two probability cuts shape the result. Edges below `threshold` never
//! merge. Clusters that separate only across edges above
//! `selection_threshold` are reported together: a confidently linked shower
//! spans orders of magnitude in λ, and plain stability would otherwise pick
//! its dense branches instead of the whole.

mod condensed;
mod export;

use serde::{Deserialize, Serialize};

pub use condensed::{condense, select_clusters, select_clusters_above, CondensedNode, CondensedTree};
pub use export::{tree_to_dot, tree_to_json};

use crate::graphbuild::TrackGraph;
use crate::{Error, Result};

/// Lower clamp on probabilities before the weight transform.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    /// Edges whose probability is below this never join clusters.
    pub threshold: f64,
    /// Clusters that split off at edges with probability above this are
    /// not selected on their own; 1 disables the rule.
    pub selection_threshold: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 4,
            threshold: 0.2,
            selection_threshold: 0.5,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 {
            return Err(Error::Config("cluster: min_cluster_size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("cluster: threshold must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.selection_threshold) {
            return Err(Error::Config("cluster: selection_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Largest transformed weight an edge may carry and still merge.
    pub fn max_weight(&self) -> f64 {
        transform_weight(self.threshold)
    }
}

pub fn transform_weight(p: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0);
    (1.0 - p).atanh() / p
}

pub fn transform_weights(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&p| transform_weight(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub n_vertices: usize,
    pub edges: Vec<WeightedEdge>,
}

/// Disjoint sets with union by rank and path compression.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Joins the sets of `a` and `b`; returns the new root, or `None` if
    /// they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> Option<usize> {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return None;
        }
        let (hi, lo) = if self.rank[ra] >= self.rank[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[lo] = hi;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        Some(hi)
    }
}

/// Minimum spanning forest, edges in acceptance order. Direction is ignored.
pub fn kruskal_mst(g: &WeightedGraph) -> Vec<WeightedEdge> {
    let mut edges = g.edges.clone();
    edges.sort_by(|a, b| a.weight.total_cmp(&b.weight).then(a.src.cmp(&b.src)).then(a.dst.cmp(&b.dst)));
    let mut uf = UnionFind::new(g.n_vertices);
    edges.into_iter().filter(|e| uf.union(e.src, e.dst).is_some()).collect()
}

/// One agglomeration step. Ids below `n_points` are points; merge `i`
/// creates node `n_points + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageTree {
    pub n_points: usize,
    pub merges: Vec<Merge>,
}

impl LinkageTree {
    pub fn size(&self, node: usize) -> usize {
        if node < self.n_points {
            1
        } else {
            self.merges[node - self.n_points].size
        }
    }

    /// Top nodes of the forest, one per connected component, ascending.
    pub fn roots(&self) -> Vec<usize> {
        let total = self.n_points + self.merges.len();
        let mut has_parent = vec![false; total];
        for m in &self.merges {
            has_parent[m.a] = true;
            has_parent[m.b] = true;
        }
        (0..total).filter(|&i| !has_parent[i]).collect()
    }

    /// Points under `node`, ascending.
    pub fn points(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n_points {
                out.push(x);
            } else {
                let m = &self.merges[x - self.n_points];
                stack.push(m.a);
                stack.push(m.b);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Replays spanning-forest edges, in the given order, as merges.
pub fn build_linkage(n_points: usize, mst: &[WeightedEdge]) -> LinkageTree {
    let mut uf = UnionFind::new(n_points);
    let mut node_of: Vec<usize> = (0..n_points).collect();
    let mut merges = Vec::with_capacity(mst.len());
    for e in mst {
        let (ra, rb) = (uf.find(e.src), uf.find(e.dst));
        if ra == rb {
            continue;
        }
        let (a, b) = (node_of[ra], node_of[rb]);
        let size = size_of(n_points, &merges, a) + size_of(n_points, &merges, b);
        let root = uf.union(ra, rb).expect("distinct roots");
        node_of[root] = n_points + merges.len();
        merges.push(Merge {
            a: a.min(b),
            b: a.max(b),
            distance: e.weight,
            size,
        });
    }
    LinkageTree { n_points, merges }
}

fn size_of(n_points: usize, merges: &[Merge], node: usize) -> usize {
    if node < n_points {
        1
    } else {
        merges[node - n_points].size
    }
}

/// Clusters a weighted graph; labels are `-1` for noise and otherwise
/// numbered by each cluster's smallest vertex.
pub fn cluster_weighted(g: &WeightedGraph, params: &ClusterParams) -> Result<(Vec<i64>, CondensedTree)> {
    params.validate()?;
    let cut = params.max_weight();
    let kept = WeightedGraph {
        n_vertices: g.n_vertices,
        edges: g.edges.iter().copied().filter(|e| e.weight <= cut).collect(),
    };
    let mst = kruskal_mst(&kept);
    let linkage = build_linkage(g.n_vertices, &mst);
    let mut tree = condense(&linkage, params.min_cluster_size);
    let eps = transform_weight(params.selection_threshold);
    let labels = select_clusters_above(&mut tree, if eps > 0.0 { 1.0 / eps } else { f64::INFINITY });
    Ok((labels, tree))
}

/// Result of clustering a track graph. `labels` follow graph vertex order;
/// tree point ids are vertex ranks by track id.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<i64>,
    pub tree: CondensedTree,
    /// Track id of each tree point.
    pub point_track_ids: Vec<i64>,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).max().map_or(0, |&m| m as usize + 1)
    }
}

/// Clusters a graph whose edges all carry probabilities. Vertices are
/// ordered by track id first, so the labels do not depend on storage order.
pub fn cluster(g: &TrackGraph, params: &ClusterParams) -> Result<Clustering> {
    let n = g.n_vertices();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| g.tracks[v].track_id);
    let mut rank = vec![0usize; n];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    let edges = g
        .edges
        .iter()
        .map(|e| {
            let p = e.prob.ok_or(Error::MissingProbability {
                src: g.tracks[e.src].track_id,
                dst: g.tracks[e.dst].track_id,
            })?;
            Ok(WeightedEdge {
                src: rank[e.src],
                dst: rank[e.dst],
                weight: transform_weight(p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (ranked, tree) = cluster_weighted(&WeightedGraph { n_vertices: n, edges }, params)?;
    Ok(Clustering {
        labels: rank.iter().map(|&r| ranked[r]).collect(),
        tree,
        point_track_ids: order.iter().map(|&v| g.tracks[v].track_id).collect(),
    })
}

/// Clusters `g` and stores the labels in it.
pub fn cluster_into(g: &mut TrackGraph, params: &ClusterParams) -> Result<Clustering> {
    let c = cluster(g, params)?;
    g.clusters = Some(c.labels.clone());
    Ok(c)
}

#[cfg(test)]
mod tests;
