use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graphbuild::{Edge, EdgeFeatures, TrackGraph, VertexFeatures};
use crate::recon::adjusted_rand_index;
use crate::tracks::BaseTrack;

fn edge(src: usize, dst: usize, weight: f64) -> WeightedEdge {
    WeightedEdge { src, dst, weight }
}

fn total(edges: &[WeightedEdge]) -> f64 {
    edges.iter().map(|e| e.weight).sum()
}

/// Dense Prim over the undirected multigraph, restarted per component.
fn prim_weight(g: &WeightedGraph) -> f64 {
    let n = g.n_vertices;
    let mut w = vec![f64::INFINITY; n * n];
    for e in &g.edges {
        for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
            if e.weight < w[a * n + b] {
                w[a * n + b] = e.weight;
            }
        }
    }
    let mut used = vec![false; n];
    let mut key = vec![f64::INFINITY; n];
    let mut sum = 0.0;
    for start in 0..n {
        if used[start] {
            continue;
        }
        key[start] = 0.0;
        loop {
            let next = (0..n)
                .filter(|&v| !used[v] && key[v].is_finite())
                .min_by(|&a, &b| key[a].total_cmp(&key[b]));
            let Some(u) = next else { break };
            used[u] = true;
            sum += key[u];
            for v in 0..n {
                if !used[v] && w[u * n + v] < key[v] {
                    key[v] = w[u * n + v];
                }
            }
        }
    }
    sum
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> WeightedGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random::<f64>() < density {
                // coarse weights force ties
                edges.push(edge(a, b, (rng.random_range(0..20) as f64) * 0.25));
            }
        }
    }
    WeightedGraph { n_vertices: n, edges }
}

#[test]
fn weight_transform_values() {
    assert_eq!(transform_weight(1.0), 0.0);
    assert!((transform_weight(0.5) - 1.098_612_288_668_109_8).abs() < 1e-14);
    assert_eq!(transform_weight(0.0), transform_weight(PROB_FLOOR));
    let grid: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
    let w = transform_weights(&grid);
    assert!(w.windows(2).all(|p| p[1] < p[0]));
}

#[test]
fn triangle_and_forest() {
    let g = WeightedGraph {
        n_vertices: 3,
        edges: vec![edge(0, 1, 1.0), edge(1, 2, 2.0), edge(0, 2, 3.0)],
    };
    assert_eq!(total(&kruskal_mst(&g)), 3.0);

    let g = WeightedGraph {
        n_vertices: 5,
        edges: vec![edge(0, 1, 1.0), edge(3, 4, 2.0), edge(4, 3, 0.5)],
    };
    let f = kruskal_mst(&g);
    assert_eq!(f.len(), 2);
    let linkage = build_linkage(5, &f);
    assert_eq!(linkage.roots().len(), 3);
}

#[test]
fn kruskal_matches_prim() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..60 {
        let n = 1 + i % 40;
        let g = random_graph(&mut rng, n, [0.02, 0.1, 0.5][i % 3]);
        assert_eq!(total(&kruskal_mst(&g)), prim_weight(&g), "graph {i}");
    }
}

#[test]
fn linkage_basics() {
    let l = build_linkage(2, &[edge(0, 1, 0.7)]);
    assert_eq!(
        l.merges,
        vec![Merge {
            a: 0,
            b: 1,
            distance: 0.7,
            size: 2
        }]
    );

    let path = WeightedGraph {
        n_vertices: 6,
        edges: (0..5).map(|i| edge(i, i + 1, 1.0)).collect(),
    };
    let a = build_linkage(6, &kruskal_mst(&path));
    let b = build_linkage(6, &kruskal_mst(&path));
    assert_eq!(a, b);
    assert_eq!(a.merges.len(), 5);
    assert!(a.merges.iter().all(|m| m.distance == 1.0));
    assert_eq!(a.merges.last().unwrap().size, 6);
}

fn blob(start: usize, len: usize, w: f64) -> Vec<WeightedEdge> {
    (start..start + len - 1)
        .map(|i| edge(i, i + 1, w * (1.0 + 0.01 * (i - start) as f64)))
        .collect()
}

fn two_blobs() -> WeightedGraph {
    let mut edges = blob(0, 10, 0.1);
    edges.extend(blob(10, 10, 0.1));
    edges.push(edge(9, 10, 5.0));
    WeightedGraph { n_vertices: 20, edges }
}

fn check_sizes(t: &CondensedTree) {
    for n in &t.nodes {
        let kids: usize = n.children.iter().map(|&c| t.nodes[c].size).sum();
        assert_eq!(kids + n.fallen.len(), n.size, "node {}", n.id);
        assert!(n.lambda_death >= n.lambda_birth);
        for &c in &n.children {
            assert!(t.nodes[c].size <= n.size);
            assert!(t.nodes[c].id > n.id);
        }
    }
}

#[test]
fn condensed_tree_shapes() {
    let tight = WeightedGraph {
        n_vertices: 12,
        edges: blob(0, 12, 0.1),
    };
    let t = condense(&build_linkage(12, &kruskal_mst(&tight)), 4);
    assert_eq!(t.nodes.len(), 1);
    check_sizes(&t);

    let g = two_blobs();
    let t = condense(&build_linkage(20, &kruskal_mst(&g)), 4);
    assert_eq!(t.nodes.len(), 3);
    assert_eq!(t.root().children, vec![1, 2]);
    assert_eq!(t.nodes[1].size, 10);
    assert!((t.nodes[1].lambda_birth - 0.2).abs() < 1e-15);
    check_sizes(&t);

    let t = condense(&build_linkage(20, &kruskal_mst(&g)), 21);
    assert_eq!(t.nodes.len(), 1);
    assert!(t.root().children.is_empty());
}

#[test]
fn two_blobs_give_two_clusters() {
    let (labels, _) = cluster_weighted(&two_blobs(), &ClusterParams::default()).unwrap();
    assert_eq!(&labels[..10], &[0; 10]);
    assert_eq!(&labels[10..], &[1; 10]);
}

/// Two tight blobs (p ≈ 0.999) joined by a confident link (p ≈ 0.95).
fn confident_pair(extra_component: bool) -> WeightedGraph {
    let mut edges = blob(0, 10, transform_weight(0.999));
    edges.extend(blob(10, 10, transform_weight(0.999)));
    edges.push(edge(9, 10, transform_weight(0.95)));
    let mut n = 20;
    if extra_component {
        edges.extend(blob(20, 6, transform_weight(0.99)));
        n = 26;
    }
    WeightedGraph { n_vertices: n, edges }
}

#[test]
fn confident_links_are_not_split() {
    for extra in [false, true] {
        let g = confident_pair(extra);
        let plain = ClusterParams {
            selection_threshold: 1.0,
            ..ClusterParams::default()
        };
        let (labels, _) = cluster_weighted(&g, &plain).unwrap();
        assert_eq!(labels[0], 0);
        assert_eq!(labels[19], 1);

        let (labels, tree) = cluster_weighted(&g, &ClusterParams::default()).unwrap();
        assert!(labels[..20].iter().all(|&l| l == 0), "{labels:?}");
        assert_eq!(tree.selected().len(), 1 + usize::from(extra));
        if extra {
            assert!(labels[20..].iter().all(|&l| l == 1));
        }
    }
}

#[test]
fn selection_threshold_splits_below_it() {
    // the joining link at p ≈ 0.95 is below a 0.99 selection threshold
    let params = ClusterParams {
        selection_threshold: 0.99,
        ..ClusterParams::default()
    };
    let (labels, _) = cluster_weighted(&confident_pair(false), &params).unwrap();
    assert_eq!((labels[0], labels[19]), (0, 1));
}

#[test]
fn strict_threshold_means_all_noise() {
    let params = ClusterParams {
        threshold: 1.0,
        ..ClusterParams::default()
    };
    let (labels, _) = cluster_weighted(&two_blobs(), &params).unwrap();
    assert!(labels.iter().all(|&l| l == crate::NOISE));
}

#[test]
fn params_validated() {
    let g = two_blobs();
    for p in [
        ClusterParams {
            min_cluster_size: 1,
            ..ClusterParams::default()
        },
        ClusterParams {
            threshold: 1.5,
            ..ClusterParams::default()
        },
        ClusterParams {
            selection_threshold: -0.1,
            ..ClusterParams::default()
        },
    ] {
        assert!(matches!(cluster_weighted(&g, &p), Err(Error::Config(_))));
    }
}

/// Random 4-block graph: pairs inside a block are linked with probability
/// 0.9 and across blocks with 0.05. Edges are scored `intra` or `inter`.
/// Returns the graph and its truth blocks.
pub(crate) fn planted(rng: &mut ChaCha8Rng, intra: f64, inter: f64) -> (WeightedGraph, Vec<i64>) {
    let sizes: Vec<usize> = (0..4).map(|_| rng.random_range(8..30)).collect();
    let truth: Vec<i64> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b as i64, s))
        .collect();
    let n = truth.len();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let same = truth[a] == truth[b];
            if rng.random::<f64>() < if same { 0.9 } else { 0.05 } {
                let p = if same { intra } else { inter };
                edges.push(edge(a, b, transform_weight(p)));
            }
        }
    }
    (WeightedGraph { n_vertices: n, edges }, truth)
}

/// Connected components over edges with probability ≥ `threshold`; those
/// smaller than `min_size` are noise.
fn components_at_cut(g: &WeightedGraph, threshold: f64, min_size: usize) -> Vec<i64> {
    let mut uf = UnionFind::new(g.n_vertices);
    for e in g.edges.iter().filter(|e| e.weight <= transform_weight(threshold)) {
        uf.union(e.src, e.dst);
    }
    let roots: Vec<usize> = (0..g.n_vertices).map(|v| uf.find(v)).collect();
    let size = |r: usize| roots.iter().filter(|&&x| x == r).count();
    roots
        .iter()
        .map(|&r| if size(r) >= min_size { r as i64 } else { crate::NOISE })
        .collect()
}

#[test]
fn planted_blocks_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hits = 0;
    for _ in 0..20 {
        let (g, truth) = planted(&mut rng, 0.9, 0.05);
        let (labels, tree) = cluster_weighted(&g, &ClusterParams::default()).unwrap();
        check_sizes(&tree);
        assert_eq!(adjusted_rand_index(&labels, &components_at_cut(&g, 0.2, 4)), 1.0);
        if adjusted_rand_index(&labels, &truth) == 1.0 {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn raising_intra_probability_never_loses_blocks() {
    let recovered = |labels: &[i64], truth: &[i64]| {
        (0..4)
            .filter(|&b| {
                let members: Vec<i64> = truth.iter().zip(labels).filter(|(t, _)| **t == b).map(|(_, l)| *l).collect();
                let l0 = members[0];
                l0 >= 0 && members.iter().all(|&l| l == l0) && labels.iter().filter(|&&l| l == l0).count() == members.len()
            })
            .count()
    };
    for seed in 0..10 {
        let mut last = 0;
        for intra in [0.25, 0.5, 0.7, 0.9, 0.99] {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (g, truth) = planted(&mut rng, intra, 0.05);
            let (labels, _) = cluster_weighted(&g, &ClusterParams::default()).unwrap();
            let r = recovered(&labels, &truth);
            assert!(r >= last, "seed {seed} intra {intra}: {r} < {last}");
            last = r;
        }
    }
}

fn graph_of(tracks: Vec<BaseTrack>, edges: &[(usize, usize, f64)]) -> TrackGraph {
    TrackGraph {
        vertex_features: tracks.iter().map(VertexFeatures::of).collect(),
        tracks,
        edges: edges
            .iter()
            .map(|&(src, dst, p)| Edge {
                src,
                dst,
                features: EdgeFeatures([0.0; 6]),
                label: None,
                prob: Some(p),
            })
            .collect(),
        clusters: None,
    }
}

fn two_shower_graph(p_in: f64, p_out: f64) -> TrackGraph {
    let tracks: Vec<BaseTrack> = (0..12)
        .map(|i| BaseTrack::new(100 + i as i64, 0.0, 0.0, 1293.0 * (i % 6) as f64, 0.0, 0.0))
        .collect();
    let mut edges = Vec::new();
    for s in 0..2 {
        for k in 0..5 {
            edges.push((6 * s + k, 6 * s + k + 1, p_in));
        }
    }
    edges.push((2, 9, p_out));
    graph_of(tracks, &edges)
}

#[test]
fn perfect_scores_reproduce_truth() {
    let g = two_shower_graph(1.0, 0.0);
    let c = cluster(&g, &ClusterParams::default()).unwrap();
    assert_eq!(c.labels, [vec![0; 6], vec![1; 6]].concat());
    assert_eq!(c.n_clusters(), 2);
}

#[test]
fn equal_scores_never_split_partially() {
    for p in [0.1, 0.3, 0.6, 1.0] {
        let g = two_shower_graph(p, p);
        let labels = cluster(&g, &ClusterParams::default()).unwrap().labels;
        let all_same = labels.iter().all(|&l| l == labels[0]);
        assert!(all_same, "p={p}: {labels:?}");
        assert_eq!(labels[0] == crate::NOISE, p < 0.2);
    }
}

#[test]
fn missing_probability_is_an_error() {
    let mut g = two_shower_graph(1.0, 0.0);
    g.edges[3].prob = None;
    assert!(matches!(
        cluster(&g, &ClusterParams::default()),
        Err(Error::MissingProbability { src: 103, dst: 104 })
    ));
}

#[test]
fn labels_follow_vertices_under_reordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (wg, _) = planted(&mut rng, 0.9, 0.05);
    let n = wg.n_vertices;
    let tracks: Vec<BaseTrack> = (0..n)
        .map(|i| BaseTrack::new(i as i64 * 7 + 1, 0.0, 0.0, 0.0, 0.0, 0.0))
        .collect();
    // probabilities of 0.9/0.05 recovered from the weights
    let back = |w: f64| if w < 1.0 { 0.9 } else { 0.05 };
    let edges: Vec<_> = wg.edges.iter().map(|e| (e.src, e.dst, back(e.weight))).collect();
    let g = graph_of(tracks.clone(), &edges);
    let base = cluster(&g, &ClusterParams::default()).unwrap().labels;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.reverse();
    perm.swap(0, n / 2);
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let shuffled_tracks: Vec<BaseTrack> = perm.iter().map(|&old| tracks[old]).collect();
    let mut shuffled_edges: Vec<_> = edges.iter().map(|&(a, b, p)| (inv[a], inv[b], p)).collect();
    shuffled_edges.reverse();
    let g2 = graph_of(shuffled_tracks, &shuffled_edges);
    let labels2 = cluster(&g2, &ClusterParams::default()).unwrap().labels;
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(labels2[new], base[old]);
    }
}

#[test]
fn exports_mention_every_node() {
    let (_, tree) = cluster_weighted(&two_blobs(), &ClusterParams::default()).unwrap();
    let dot = tree_to_dot(&tree);
    assert!(dot.starts_with("digraph"));
    assert_eq!(dot.matches("->").count(), 2);
    assert_eq!(dot.matches("peripheries=2").count(), 2);
    let json: serde_json::Value = serde_json::from_str(&tree_to_json(&tree).unwrap()).unwrap();
    assert_eq!(json["nodes"].as_array().unwrap().len(), 3);
    assert_eq!(json["nodes"][1]["parent"], 0);
}

proptest! {
    #[test]
    fn merge_distances_nondecreasing(seed in 0u64..1000, n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 0.2);
        let mst = kruskal_mst(&g);
        let l = build_linkage(n, &mst);
        prop_assert_eq!(l.merges.len(), mst.len());
        prop_assert!(l.merges.windows(2).all(|w| w[0].distance <= w[1].distance));
        let t = condense(&l, 3);
        check_sizes(&t);
    }

    #[test]
    fn labels_partition_with_large_clusters(seed in 0u64..1000, n in 1usize..60, mcs in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 0.1);
        let params = ClusterParams { min_cluster_size: mcs, ..ClusterParams::default() };
        let (labels, _) = cluster_weighted(&g, &params).unwrap();
        prop_assert_eq!(labels.len(), n);
        let k = labels.iter().copied().max().unwrap_or(-1);
        for c in 0..=k {
            prop_assert!(labels.iter().filter(|&&l| l == c).count() >= mcs);
        }
        prop_assert!(labels.iter().all(|&l| l >= -1));
    }
}
