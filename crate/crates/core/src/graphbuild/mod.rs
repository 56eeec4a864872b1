//! Directed track graph.
//!
//! Every track is a vertex. Candidate edges run from a track to tracks on
//! strictly later planes and are ranked by integral distance; each vertex
//! keeps at most `k` outgoing and `k` incoming edges.

mod features;
pub mod io;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::{
    int_dist, ip_projections, pair_energy_likeliness, vertex_features, EdgeFeatures, Moliere, PairDeltas, PairLikelihood,
    VertexFeatures, EPS,
};
pub use io::{load_graph, read_graph, save_graph, write_graph};

use crate::tracks::{BaseTrack, Brick, PLANE_TOLERANCE};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k: usize,
    /// Fill the sixth edge feature with the spatial angle difference; zero otherwise.
    pub include_dtheta: bool,
    /// Use the Gaussian projection terms in the pair-energy likelihood.
    pub gaussian_terms: bool,
    #[serde(flatten)]
    pub moliere: Moliere,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 10,
            include_dtheta: true,
            gaussian_terms: true,
            moliere: Moliere::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub features: EdgeFeatures,
    pub label: Option<u8>,
    pub prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackGraph {
    pub tracks: Vec<BaseTrack>,
    pub vertex_features: Vec<VertexFeatures>,
    pub edges: Vec<Edge>,
    /// Cluster label per vertex once the graph has been clustered.
    pub clusters: Option<Vec<i64>>,
}

impl TrackGraph {
    pub fn n_vertices(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_labeled(&self) -> bool {
        self.edges.iter().all(|e| e.label.is_some())
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_vertices()];
        for e in &self.edges {
            d[e.src] += 1;
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_vertices()];
        for e in &self.edges {
            d[e.dst] += 1;
        }
        d
    }

    pub fn labels(&self) -> Option<Vec<u8>> {
        self.edges.iter().map(|e| e.label).collect()
    }

    pub fn probabilities(&self) -> Option<Vec<f64>> {
        self.edges.iter().map(|e| e.prob).collect()
    }
}

/// Ranking key of a candidate edge: distance, then track ids.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub dist: f64,
    pub src: usize,
    pub dst: usize,
    pub src_id: i64,
    pub dst_id: i64,
}

impl Candidate {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.src_id.cmp(&other.src_id))
            .then(self.dst_id.cmp(&other.dst_id))
    }
}

fn downstream(a: &BaseTrack, b: &BaseTrack) -> bool {
    b.z - a.z > PLANE_TOLERANCE
}

fn keep_best(mut cands: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, Candidate::cmp_key);
        cands.truncate(k);
    }
    cands
}

/// Retained candidate edges `(src, dst)` for a set of tracks.
pub(crate) fn select_edges(tracks: &[BaseTrack], k: usize) -> Vec<Candidate> {
    let n = tracks.len();
    let cand = |i: usize, j: usize| Candidate {
        dist: int_dist(&tracks[i], &tracks[j]),
        src: i,
        dst: j,
        src_id: tracks[i].track_id,
        dst_id: tracks[j].track_id,
    };
    let best_out: Vec<Vec<Candidate>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let c = (0..n)
                .filter(|&j| downstream(&tracks[i], &tracks[j]))
                .map(|j| cand(i, j))
                .collect();
            keep_best(c, k)
        })
        .collect();
    let best_in: Vec<Vec<Candidate>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let c = (0..n)
                .filter(|&i| downstream(&tracks[i], &tracks[j]))
                .map(|i| cand(i, j))
                .collect();
            keep_best(c, k)
        })
        .collect();

    let mut union: Vec<Candidate> = best_out.into_iter().chain(best_in).flatten().collect();
    union.sort_by(Candidate::cmp_key);
    union.dedup_by(|a, b| a.src == b.src && a.dst == b.dst);

    let mut out_deg = vec![0usize; n];
    let mut in_deg = vec![0usize; n];
    let mut kept: Vec<Candidate> = union
        .into_iter()
        .filter(|c| {
            if out_deg[c.src] < k && in_deg[c.dst] < k {
                out_deg[c.src] += 1;
                in_deg[c.dst] += 1;
                true
            } else {
                false
            }
        })
        .collect();
    kept.sort_by_key(|c| (c.src, c.dst));
    kept
}

pub fn edge_features(a: &BaseTrack, b: &BaseTrack, cfg: &GraphConfig) -> Result<EdgeFeatures> {
    let (ip_x, ip_y) = ip_projections(a, b);
    let (energy, log_l) = pair_energy_likeliness(a, b, &cfg.moliere, cfg.gaussian_terms)?;
    let dtheta = if cfg.include_dtheta {
        PairDeltas::new(a, b)?.dtheta()
    } else {
        0.0
    };
    Ok(EdgeFeatures([int_dist(a, b), ip_x, ip_y, energy, log_l, dtheta]))
}

pub fn build_graph(brick: &Brick, cfg: &GraphConfig) -> Result<TrackGraph> {
    if cfg.k == 0 {
        return Err(Error::Config("graph: k must be at least 1".into()));
    }
    let tracks = &brick.tracks;
    let selected = select_edges(tracks, cfg.k);
    let edges = selected
        .par_iter()
        .map(|c| {
            Ok(Edge {
                src: c.src,
                dst: c.dst,
                features: edge_features(&tracks[c.src], &tracks[c.dst], cfg)?,
                label: None,
                prob: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackGraph {
        tracks: tracks.clone(),
        vertex_features: tracks.iter().map(VertexFeatures::of).collect(),
        edges,
        clusters: None,
    })
}

/// Labels each edge 1 when both endpoints carry the same shower id.
pub fn edge_labels(g: &mut TrackGraph, shower_of_vertex: &[i64]) -> Result<()> {
    if shower_of_vertex.len() != g.n_vertices() {
        return Err(Error::LabelMismatch(format!(
            "{} labels for {} vertices",
            shower_of_vertex.len(),
            g.n_vertices()
        )));
    }
    if let Some(i) = shower_of_vertex.iter().position(|&s| s == crate::NOISE) {
        return Err(Error::Unlabeled(g.tracks[i].track_id));
    }
    for e in &mut g.edges {
        e.label = Some(u8::from(shower_of_vertex[e.src] == shower_of_vertex[e.dst]));
    }
    Ok(())
}

/// Labels edges from the truth shower ids stored on the graph's tracks.
pub fn label_from_tracks(g: &mut TrackGraph) -> Result<()> {
    let truth: Vec<i64> = g.tracks.iter().map(|t| t.shower_id).collect();
    edge_labels(g, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toygen::{gen_brick, GenConfig};
    use crate::tracks::plane_z;

    #[test]
    fn two_tracks_one_edge() {
        let brick = Brick::new(
            0,
            vec![
                BaseTrack::new(0, 0.0, 0.0, plane_z(3), 0.0, 0.0),
                BaseTrack::new(1, 10.0, 0.0, plane_z(1), 0.0, 0.0),
            ],
        )
        .unwrap();
        let g = build_graph(&brick, &GraphConfig::default()).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!((g.edges[0].src, g.edges[0].dst), (1, 0));
    }

    #[test]
    fn same_plane_tracks_are_not_linked() {
        let brick = Brick::new(
            0,
            vec![
                BaseTrack::new(0, 0.0, 0.0, plane_z(3), 0.0, 0.0),
                BaseTrack::new(1, 10.0, 0.0, plane_z(3), 0.0, 0.0),
            ],
        )
        .unwrap();
        assert!(build_graph(&brick, &GraphConfig::default()).unwrap().edges.is_empty());
    }

    #[test]
    fn collinear_tracks_respect_degree_budget() {
        let tracks = (0..30)
            .map(|i| {
                let z = plane_z(i);
                BaseTrack::new(i as i64, 100.0 + 0.1 * z, -50.0 + 0.05 * z, z, 0.1, 0.05).with_shower(0)
            })
            .collect();
        let brick = Brick::new(0, tracks).unwrap();
        let g = build_graph(&brick, &GraphConfig::default()).unwrap();
        assert!(g.out_degrees().iter().all(|&d| d <= 10));
        assert!(g.in_degrees().iter().all(|&d| d <= 10));
        assert!(g.edges.iter().all(|e| g.tracks[e.src].z < g.tracks[e.dst].z));
    }

    /// O(n²) restatement of the retention rule.
    fn brute_force(tracks: &[BaseTrack], k: usize) -> Vec<(usize, usize)> {
        let n = tracks.len();
        let key = |i: usize, j: usize| (int_dist(&tracks[i], &tracks[j]), tracks[i].track_id, tracks[j].track_id);
        let less = |a: (f64, i64, i64), b: (f64, i64, i64)| a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2));
        let linkable = |i: usize, j: usize| tracks[j].z > tracks[i].z + 0.5;
        let rank_out = |i: usize, j: usize| (0..n).filter(|&m| linkable(i, m) && less(key(i, m), key(i, j))).count();
        let rank_in = |i: usize, j: usize| (0..n).filter(|&m| linkable(m, j) && less(key(m, j), key(i, j))).count();
        let mut cands: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if linkable(i, j) && (rank_out(i, j) < k || rank_in(i, j) < k) {
                    cands.push((i, j));
                }
            }
        }
        cands.sort_by(|&(a, b), &(c, d)| {
            let (ka, kb) = (key(a, b), key(c, d));
            if less(ka, kb) {
                Ordering::Less
            } else if less(kb, ka) {
                Ordering::Greater
            } else {
                Ordering::Equal
            }
        });
        let mut out = vec![0; n];
        let mut inn = vec![0; n];
        let mut kept = Vec::new();
        for (i, j) in cands {
            if out[i] < k && inn[j] < k {
                out[i] += 1;
                inn[j] += 1;
                kept.push((i, j));
            }
        }
        kept.sort_unstable();
        kept
    }

    #[test]
    fn retained_edges_match_brute_force() {
        for seed in 0..4 {
            let cfg = GenConfig {
                n_showers: 3,
                seed,
                e_min: 100.0,
                e_max: 300.0,
                origin_fraction: 0.02,
                ..GenConfig::default()
            };
            let (brick, _) = gen_brick(&cfg, 0).unwrap();
            for k in [1, 3, 10] {
                let fast: Vec<(usize, usize)> = select_edges(&brick.tracks, k).iter().map(|c| (c.src, c.dst)).collect();
                assert_eq!(fast, brute_force(&brick.tracks, k), "seed {seed} k {k}");
            }
        }
    }

    #[test]
    fn labels_follow_truth() {
        let brick = Brick::new(
            0,
            vec![
                BaseTrack::new(0, 0.0, 0.0, plane_z(0), 0.0, 0.0).with_shower(3),
                BaseTrack::new(1, 0.0, 0.0, plane_z(1), 0.0, 0.0).with_shower(3),
                BaseTrack::new(2, 5.0, 0.0, plane_z(2), 0.0, 0.0).with_shower(5),
            ],
        )
        .unwrap();
        let mut g = build_graph(&brick, &GraphConfig::default()).unwrap();
        label_from_tracks(&mut g).unwrap();
        for e in &g.edges {
            let same = g.tracks[e.src].shower_id == g.tracks[e.dst].shower_id;
            assert_eq!(e.label, Some(u8::from(same)));
        }
        assert!(g.edges.iter().any(|e| e.label == Some(0)));
        assert!(g.edges.iter().any(|e| e.label == Some(1)));

        let mut unlabeled = g.clone();
        let mut truth: Vec<i64> = g.tracks.iter().map(|t| t.shower_id).collect();
        truth[1] = crate::NOISE;
        assert!(matches!(edge_labels(&mut unlabeled, &truth), Err(Error::Unlabeled(1))));
    }

    fn negative_ratio(cfg: &GenConfig) -> f64 {
        let (brick, _) = gen_brick(cfg, 0).unwrap();
        let mut g = build_graph(&brick, &GraphConfig::default()).unwrap();
        label_from_tracks(&mut g).unwrap();
        let pos = g.edges.iter().filter(|e| e.label == Some(1)).count() as f64;
        (g.edges.len() as f64 - pos) / pos
    }

    #[test]
    fn overlap_raises_the_share_of_negative_edges() {
        let sparse = negative_ratio(&GenConfig {
            seed: 2,
            ..GenConfig::default()
        });
        let dense = negative_ratio(&GenConfig {
            n_showers: 20,
            seed: 2,
            origin_fraction: 0.001,
            max_slope: 0.02,
            ..GenConfig::default()
        });
        assert!(sparse > 0.0);
        assert!(dense > 5.0 * sparse, "sparse {sparse}, dense {dense}");
    }

    #[test]
    fn graph_is_storage_order_invariant() {
        let cfg = GenConfig {
            n_showers: 4,
            seed: 12,
            origin_fraction: 0.02,
            ..GenConfig::default()
        };
        let (brick, _) = gen_brick(&cfg, 0).unwrap();
        let g = build_graph(&brick, &GraphConfig::default()).unwrap();
        let mut rev = brick.clone();
        rev.tracks.reverse();
        let gr = build_graph(&rev, &GraphConfig::default()).unwrap();
        let ids = |g: &TrackGraph| {
            let mut v: Vec<(i64, i64)> = g
                .edges
                .iter()
                .map(|e| (g.tracks[e.src].track_id, g.tracks[e.dst].track_id))
                .collect();
            v.sort_unstable();
            v
        };
        assert_eq!(ids(&g), ids(&gr));
    }
}
