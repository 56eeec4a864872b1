//! Acceptance checks, one line per criterion. Each check compares the
//! library against an oracle written here.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use emucascade::autodiff::{Matrix, Tape};
use emucascade::ewscam::{cluster_into, cluster_weighted, kruskal_mst, transform_weight, WeightedEdge, WeightedGraph};
use emucascade::gnn::{
    edgeconv_forward, emulsionconv_forward, encode, focal_loss, forward_logits, roc_auc, BlockKind, FeatureScaler, GraphIndex,
    PreparedGraph,
};
use emucascade::graphbuild::{build_graph, int_dist, label_from_tracks, pair_energy_likeliness};
use emucascade::recon::{analyze_brick, categorize_showers, energy_resolution, Category, EnergyModel, RecoveredShower};
use emucascade::toygen::{gen_brick, sample_scatter};
use emucascade::tracks::plane_z;
use emucascade::{BaseTrack, ClusterParams, GenConfig, GnnModel, GraphConfig, ModelConfig, NOISE};
use emucascade_cli::commands::cmd_pipeline;
use emucascade_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Check>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. Integral distance ------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 60)
}

fn random_track(rng: &mut ChaCha8Rng, id: i64) -> BaseTrack {
    BaseTrack::new(
        id,
        rng.random_range(-62500.0..62500.0),
        rng.random_range(-49500.0..49500.0),
        plane_z(rng.random_range(0..58)),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
    )
}

fn c1_int_dist() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let a = random_track(&mut rng, 2 * i);
        let mut b = random_track(&mut rng, 2 * i + 1);
        if i % 4 == 0 {
            // nearby pairs whose projections cross between the planes
            b.x = a.x + rng.random_range(-50.0..50.0);
            b.y = a.y + rng.random_range(-50.0..50.0);
        }
        let (lo, hi) = (a.z.min(b.z), a.z.max(b.z));
        let gap = |z: f64| {
            let (ax, ay) = (a.x + a.tx * (z - a.z), a.y + a.ty * (z - a.z));
            let (bx, by) = (b.x + b.tx * (z - b.z), b.y + b.ty * (z - b.z));
            (ax - bx).abs() + (ay - by).abs()
        };
        let closed = int_dist(&a, &b);
        if hi == lo {
            ensure(closed == 0.0, || format!("same-plane pair gave {closed}"))?;
            continue;
        }
        let scale = adaptive_simpson(&gap, lo, hi, 1e-6 * (hi - lo));
        let quad = adaptive_simpson(&gap, lo, hi, 1e-14 * scale.max(1.0));
        let rel = (closed - quad).abs() / quad.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    let t = start.elapsed();
    ensure(worst <= 1e-9, || format!("max relative error {worst:e}"))?;
    ensure(t < Duration::from_secs(5), || format!("took {t:.1?}"))?;
    Ok(format!("1000 pairs, max rel err {worst:.1e}, {t:.2?}"))
}

// 2. Gradient check ----------------------------------------------------------

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn twenty_vertex_graph() -> PreparedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let depth: Vec<f64> = (0..20).map(|v| plane_z(v % 5)).collect();
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for a in 0..20 {
        for b in 0..20 {
            if depth[b] > depth[a] && rng.random::<f64>() < 0.25 {
                src.push(a);
                dst.push(b);
            }
        }
    }
    let e = src.len();
    PreparedGraph {
        index: GraphIndex::from_parts(depth, src, dst),
        vertex_inputs: random_matrix(&mut rng, 20, 10),
        edge_inputs: random_matrix(&mut rng, e, 6),
        labels: Some((0..e).map(|_| f64::from(rng.random::<f64>() < 0.3)).collect()),
    }
}

fn small_model(cfg: ModelConfig) -> GnnModel {
    let mut m = GnnModel::new(cfg, FeatureScaler::identity()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in m.params.iter_mut().filter(|p| p.name.ends_with(".b")) {
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
    m
}

fn model_loss(m: &GnnModel, g: &PreparedGraph) -> f64 {
    let mut tape = Tape::inference();
    let bound = m.bind(&mut tape);
    let z = forward_logits(&mut tape, &bound, g).unwrap();
    let l = tape.focal_loss(z, g.labels.as_ref().unwrap(), 3.0).unwrap();
    tape.value(l).data[0]
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn c2_gradients() -> Check {
    let start = Instant::now();
    let h = 1e-4;
    let g = twenty_vertex_graph();
    let m = small_model(ModelConfig {
        d_hidden: 6,
        n_emulsion: 1,
        n_edge: 1,
        ..ModelConfig::default()
    });
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape);
    let z = forward_logits(&mut tape, &bound, &g).unwrap();
    let l = tape.focal_loss(z, g.labels.as_ref().unwrap(), 3.0).unwrap();
    let grads = tape.backward(l).unwrap();

    let groups = ["encoder", "edgeconv", "emulsionconv", "head"];
    let mut worst = [0.0f64; 5];
    let mut counted = [0usize; 5];
    for (pi, p) in m.params.iter().enumerate() {
        let gi = groups
            .iter()
            .position(|k| p.name.contains(k))
            .ok_or_else(|| format!("unexpected parameter {}", p.name))?;
        let analytic = grads
            .get(bound.vars[pi])
            .ok_or_else(|| format!("{} has no gradient", p.name))?;
        for j in 0..p.data.len() {
            let mut plus = m.clone();
            plus.params[pi].data[j] += h;
            let mut minus = m.clone();
            minus.params[pi].data[j] -= h;
            let fd = (model_loss(&plus, &g) - model_loss(&minus, &g)) / (2.0 * h);
            worst[gi] = worst[gi].max(rel_err(fd, analytic.data[j]));
            counted[gi] += 1;
        }
    }

    // the loss alone, with respect to its logits
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let logits = random_matrix(&mut rng, 50, 1);
    let labels: Vec<f64> = (0..50).map(|i| f64::from(i % 3 == 0)).collect();
    let fl = |x: &Matrix| {
        let mut t = Tape::inference();
        let v = t.leaf(x.clone());
        let l = t.focal_loss(v, &labels, 3.0).unwrap();
        t.value(l).data[0]
    };
    let mut t = Tape::new();
    let v = t.leaf(logits.clone());
    let l = t.focal_loss(v, &labels, 3.0).unwrap();
    let gz = t.backward(l).unwrap().get(v).unwrap().clone();
    for j in 0..50 {
        let (mut p, mut q) = (logits.clone(), logits.clone());
        p.data[j] += h;
        q.data[j] -= h;
        worst[4] = worst[4].max(rel_err((fl(&p) - fl(&q)) / (2.0 * h), gz.data[j]));
        counted[4] += 1;
    }

    let names = ["encoder", "edgeconv", "emulsionconv", "head", "focal"];
    let t = start.elapsed();
    for i in 0..5 {
        ensure(counted[i] > 0, || format!("{} not covered", names[i]))?;
        ensure(worst[i] < 1e-4, || format!("{}: max rel err {:e}", names[i], worst[i]))?;
    }
    ensure(t < Duration::from_secs(60), || format!("took {t:.1?}"))?;
    let summary: Vec<String> = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.0e}")).collect();
    Ok(format!("{} ({t:.1?})", summary.join(", ")))
}

// 3. Receptive field ---------------------------------------------------------

fn sensitivities(kind: BlockKind) -> Vec<f64> {
    let n = 58;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = PreparedGraph {
        index: GraphIndex::from_parts((0..n).map(plane_z).collect(), (0..n - 1).collect(), (1..n).collect()),
        vertex_inputs: random_matrix(&mut rng, n, 10),
        edge_inputs: random_matrix(&mut rng, n - 1, 6),
        labels: None,
    };
    let (n_emulsion, n_edge) = match kind {
        BlockKind::Emulsion => (1, 0),
        BlockKind::Edge => (0, 1),
    };
    let d = 8;
    let m = small_model(ModelConfig {
        d_hidden: d,
        n_emulsion,
        n_edge,
        ..ModelConfig::default()
    });
    (0..n)
        .map(|v| {
            let mut tape = Tape::new();
            let b = m.bind(&mut tape);
            let xv = tape.leaf(g.vertex_inputs.clone());
            let xe = tape.leaf(g.edge_inputs.clone());
            let (h, e) = encode(&mut tape, &b.encoder, xv, xe).unwrap();
            let params = b.blocks[0].1;
            let out = match kind {
                BlockKind::Emulsion => emulsionconv_forward(&mut tape, &g.index, h, e, &params, b.aggregation).unwrap(),
                BlockKind::Edge => edgeconv_forward(&mut tape, &g.index, h, e, &params, b.aggregation).unwrap(),
            };
            let row = tape.gather(out, &[v]).unwrap();
            let ones = tape.leaf(Matrix::from_vec(d, 1, vec![1.0; d]));
            let s = tape.matmul(row, ones).unwrap();
            let grads = tape.backward(s).unwrap();
            grads
                .get(xv)
                .map_or(0.0, |gx| gx.row(0).iter().fold(0.0f64, |a, x| a.max(x.abs())))
        })
        .collect()
}

fn c3_receptive_field() -> Check {
    let em = sensitivities(BlockKind::Emulsion);
    let first_zero = em.iter().position(|&s| s == 0.0);
    ensure(first_zero.is_none(), || {
        format!("EmulsionConv response vanishes at plane {first_zero:?}")
    })?;
    let ed = sensitivities(BlockKind::Edge);
    ensure(ed[0] > 1e-12 && ed[1] > 1e-12, || {
        format!("EdgeConv misses its neighbour: {:?}", &ed[..2])
    })?;
    let beyond = ed[2..].iter().fold(0.0f64, |a, &s| a.max(s));
    ensure(beyond <= 1e-12, || format!("EdgeConv response {beyond:e} beyond one hop"))?;
    Ok(format!(
        "EmulsionConv plane 57 response {:.1e}; EdgeConv hop-1 {:.1e}, beyond {beyond:.0e}",
        em[57], ed[1]
    ))
}

// 4. Focal loss --------------------------------------------------------------

fn c4_focal() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p: Vec<f64> = (0..10_000).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect();
    let y: Vec<u8> = (0..10_000).map(|_| u8::from(rng.random::<bool>())).collect();
    let ce = p
        .iter()
        .zip(&y)
        .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum::<f64>()
        / p.len() as f64;
    let fl0 = focal_loss(&p, &y, 0.0);
    ensure((fl0 - ce).abs() <= 1e-12, || {
        format!("γ=0 differs from CE by {:e}", (fl0 - ce).abs())
    })?;
    let half = focal_loss(&[0.5], &[1], 3.0);
    let expect = 0.125 * std::f64::consts::LN_2;
    ensure((half - expect).abs() <= 1e-9, || {
        format!("FL(0.5, 3) = {half}, expected {expect}")
    })?;
    Ok(format!("|FL₀ − CE| = {:.0e}, FL(0.5, 3) = {half:.12}", (fl0 - ce).abs()))
}

// 5. ROC-AUC -----------------------------------------------------------------

fn c5_auc() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..20);
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / 7.0).collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        let (np, nn) = (y.iter().filter(|&&v| v == 1).count(), y.iter().filter(|&&v| v == 0).count());
        if np == 0 || nn == 0 {
            continue;
        }
        let mut twice = 0u64;
        for i in 0..n {
            for j in 0..n {
                if y[i] == 1 && y[j] == 0 {
                    twice += if s[i] > s[j] {
                        2
                    } else if s[i] == s[j] {
                        1
                    } else {
                        0
                    };
                }
            }
        }
        let brute = twice as f64 / (2 * np * nn) as f64;
        let got = roc_auc(&s, &y).map_err(|e| e.to_string())?;
        ensure(got == brute, || format!("n={n}: {got} vs brute force {brute}"))?;
        done += 1;
    }
    Ok("100 tied instances identical to brute force".into())
}

// 6. MST ---------------------------------------------------------------------

fn prim_weights(g: &WeightedGraph) -> Vec<f64> {
    let n = g.n_vertices;
    let mut adj = vec![Vec::new(); n];
    for e in &g.edges {
        adj[e.src].push((e.dst, e.weight));
        adj[e.dst].push((e.src, e.weight));
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut out = Vec::new();
    for start in 0..n {
        if in_tree[start] {
            continue;
        }
        best[start] = 0.0;
        let mut frontier = vec![start];
        loop {
            let next = frontier
                .iter()
                .copied()
                .filter(|&v| !in_tree[v])
                .min_by(|&a, &b| best[a].total_cmp(&best[b]));
            let Some(v) = next else { break };
            in_tree[v] = true;
            if v != start {
                out.push(best[v]);
            }
            for &(u, w) in &adj[v] {
                if !in_tree[u] && w < best[u] {
                    if best[u].is_infinite() {
                        frontier.push(u);
                    }
                    best[u] = w;
                }
            }
        }
    }
    out
}

fn c6_mst() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..200 {
        let n = rng.random_range(1..=500);
        let density = [0.002, 0.01, 0.05, 0.2][i % 4];
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < density {
                    let weight = if i % 2 == 0 {
                        f64::from(rng.random_range(0..10u8))
                    } else {
                        rng.random_range(0.0..100.0)
                    };
                    edges.push(WeightedEdge { src: a, dst: b, weight });
                }
            }
        }
        let g = WeightedGraph { n_vertices: n, edges };
        let mut k: Vec<f64> = kruskal_mst(&g).iter().map(|e| e.weight).collect();
        let mut p = prim_weights(&g);
        k.sort_by(f64::total_cmp);
        p.sort_by(f64::total_cmp);
        let (ks, ps) = (k.iter().sum::<f64>(), p.iter().sum::<f64>());
        ensure(k == p && ks == ps, || format!("graph {i} (n={n}): Kruskal {ks} vs Prim {ps}"))?;
    }
    Ok("200 graphs, identical forest weights".into())
}

// 7. Planted partition -------------------------------------------------------

fn same_partition(a: &[i64], b: &[i64]) -> bool {
    use std::collections::HashMap;
    let (mut ab, mut ba) = (HashMap::new(), HashMap::new());
    a.iter()
        .zip(b)
        .all(|(x, y)| *ab.entry(*x).or_insert(*y) == *y && *ba.entry(*y).or_insert(*x) == *x)
}

fn c7_planted() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = ClusterParams {
        min_cluster_size: 4,
        threshold: 0.2,
        ..ClusterParams::default()
    };
    let mut hits = 0;
    for _ in 0..50 {
        let truth: Vec<i64> = (0..4).flat_map(|b| std::iter::repeat_n(b, rng.random_range(8..30))).collect();
        let n = truth.len();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let p = if truth[a] == truth[b] { 0.9 } else { 0.05 };
                if rng.random::<f64>() < p {
                    edges.push(WeightedEdge {
                        src: a,
                        dst: b,
                        weight: transform_weight(p),
                    });
                }
            }
        }
        let (labels, _) = cluster_weighted(&WeightedGraph { n_vertices: n, edges }, &params).map_err(|e| e.to_string())?;
        if same_partition(&labels, &truth) {
            hits += 1;
        }
    }
    ensure(hits >= 48, || format!("{hits}/50 recovered"))?;
    Ok(format!("{hits}/50 block partitions recovered exactly"))
}

// 8. Metric definitions -------------------------------------------------------

fn oracle_category(truth: &[i64], labels: &[i64], shower: i64) -> Category {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    let mut n = 0;
    for (&t, &l) in truth.iter().zip(labels) {
        if t == shower {
            n += 1;
            if l != NOISE {
                *counts.entry(l).or_default() += 1;
            }
        }
    }
    let mut c: Vec<usize> = counts.into_values().collect();
    c.sort_unstable_by(|a, b| b.cmp(a));
    let c1 = c.first().copied().unwrap_or(0);
    let c2 = c.get(1).copied().unwrap_or(0);
    let clustered: usize = c.iter().sum();
    if c2 > 0 && (c1 as f64) < 2.0 * c2 as f64 {
        Category::Broken
    } else if (clustered as f64) < 0.1 * n as f64 {
        Category::Lost
    } else if c1 as f64 > 0.9 * n as f64 {
        Category::Recovered
    } else {
        Category::Stuck
    }
}

/// One shower of `n` tracks spread over clusters as given (`NOISE` allowed).
fn fixture(parts: &[(i64, usize)]) -> (Vec<i64>, Vec<i64>) {
    let labels: Vec<i64> = parts.iter().flat_map(|&(l, k)| std::iter::repeat_n(l, k)).collect();
    (vec![0; labels.len()], labels)
}

fn c8_categories() -> Check {
    let cases: [(&[(i64, usize)], Category); 9] = [
        (&[(3, 19), (NOISE, 1)], Category::Recovered),
        (&[(3, 18), (NOISE, 2)], Category::Stuck),
        (&[(1, 10), (2, 6)], Category::Broken),
        (&[(1, 10), (2, 5)], Category::Stuck),
        (&[(1, 1), (NOISE, 19)], Category::Lost),
        (&[(1, 2), (NOISE, 18)], Category::Stuck),
        (&[(1, 1), (2, 1), (NOISE, 28)], Category::Broken),
        (&[(NOISE, 5)], Category::Lost),
        (&[(4, 12), (NOISE, 8)], Category::Stuck),
    ];
    for (parts, want) in cases {
        let (truth, labels) = fixture(parts);
        let got = categorize_showers(&truth, &labels).map_err(|e| e.to_string())?;
        ensure(got.len() == 1 && got[0].category == want, || {
            format!(
                "{parts:?}: got {:?}, expected {want:?}",
                got.iter().map(|o| o.category).collect::<Vec<_>>()
            )
        })?;
    }
    // a cluster holding a whole shower plus others' tracks still recovers it
    let truth = [vec![0; 10], vec![1; 10]].concat();
    let labels = vec![7; 20];
    let got = categorize_showers(&truth, &labels).map_err(|e| e.to_string())?;
    ensure(got.iter().all(|o| o.category == Category::Recovered), || format!("{got:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let n = rng.random_range(1..300);
        let n_showers = rng.random_range(1..10);
        let n_clusters = rng.random_range(1..10);
        let truth: Vec<i64> = (0..n).map(|_| rng.random_range(-1..n_showers)).collect();
        let labels: Vec<i64> = (0..n).map(|_| rng.random_range(-1..n_clusters)).collect();
        let out = categorize_showers(&truth, &labels).map_err(|e| e.to_string())?;
        let mut ids: Vec<i64> = truth.iter().copied().filter(|&t| t != NOISE).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut got: Vec<i64> = out.iter().map(|o| o.shower_id).collect();
        got.sort_unstable();
        ensure(got == ids, || format!("showers {got:?} vs {ids:?}"))?;
        for o in &out {
            let want = oracle_category(&truth, &labels, o.shower_id);
            ensure(o.category == want, || {
                format!("shower {}: {:?} vs oracle {want:?}", o.shower_id, o.category)
            })?;
        }
    }
    Ok("10 fixtures exact; 500 random partitions match the oracle".into())
}

// 9 and 11. Pipeline runs ------------------------------------------------------

fn desk_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.set_seed(2024);
    cfg.run.n_bricks = 5;
    cfg.run.n_train = 3;
    cfg.run.n_val = 1;
    cfg.run.n_test = 1;
    cfg.gen.n_showers = 8;
    cfg.train.max_epochs = 300;
    cfg
}

fn c9_end_to_end(dir: &Path) -> Check {
    let cfg = desk_config();
    let start = Instant::now();
    let run = cmd_pipeline(&cfg, dir, false).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let m = run.metrics;
    let training = m.training.as_ref().ok_or("no training summary")?;
    let val_auc = m.edge_auc.val.ok_or("no validation AUC")?;
    let detail = format!(
        "val AUC {val_auc:.4}, recovered {:.1}% of {} showers, {} epochs, {t:.0?}",
        m.percentages.recovered, m.report.aggregate.n_showers, training.epochs_run
    );
    ensure(training.epochs_run <= 300, || detail.clone())?;
    ensure(val_auc >= 0.9, || detail.clone())?;
    ensure(m.percentages.recovered >= 70.0, || detail.clone())?;
    ensure(t <= Duration::from_secs(600), || detail.clone())?;
    Ok(detail)
}

fn c11_determinism(dir: &Path) -> Check {
    let cfg = dir.join("run.ini");
    std::fs::write(
        &cfg,
        "[run]\nseed = 11\nn_bricks = 5\n[gen]\nn_showers = 4\n[train]\nmax_epochs = 8\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outs = Vec::new();
    for (tag, jobs) in [("a", "1"), ("b", "4")] {
        let out = dir.join(tag);
        let status = Command::new(env!("CARGO_BIN_EXE_emucascade"))
            .args(["--jobs", jobs, "pipeline", "--quiet", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .env_remove("EMUCASCADE_SEED")
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("pipeline exited with {status}"))?;
        outs.push(out);
    }
    for f in ["metrics.json", "model.json"] {
        let a = std::fs::read(outs[0].join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(outs[1].join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok("metrics.json and model.json byte-identical (1 and 4 threads)".into())
}

// 10. Energy pipeline ---------------------------------------------------------

fn recovered_showers(cfg: &GenConfig, ids: std::ops::Range<i64>) -> Result<Vec<RecoveredShower>, String> {
    let mut out = Vec::new();
    for id in ids {
        let (brick, truths) = gen_brick(cfg, id).map_err(|e| e.to_string())?;
        let mut g = build_graph(&brick, &GraphConfig::default()).map_err(|e| e.to_string())?;
        label_from_tracks(&mut g).map_err(|e| e.to_string())?;
        for e in &mut g.edges {
            e.prob = e.label.map(f64::from);
        }
        cluster_into(&mut g, &ClusterParams::default()).map_err(|e| e.to_string())?;
        let truth: Vec<i64> = g.tracks.iter().map(|t| t.shower_id).collect();
        out.extend(analyze_brick(id, &g, &truth, &truths).map_err(|e| e.to_string())?.recovered);
    }
    Ok(out)
}

fn c10_energy() -> Check {
    let cfg = GenConfig {
        seed: 10,
        ..GenConfig::default()
    };
    let fit = recovered_showers(&cfg, 0..12)?;
    let test = recovered_showers(&cfg, 100..112)?;
    let model = EnergyModel::fit(
        &fit.iter().map(|r| r.features).collect::<Vec<_>>(),
        &fit.iter().map(|r| r.e_true).collect::<Vec<_>>(),
    )
    .map_err(|e| e.to_string())?;
    let mut pairs: Vec<(f64, f64)> = test.iter().map(|r| (r.e_true, model.predict(&r.features))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (t, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let all = energy_resolution(&t, &r);
    ensure(all.is_finite(), || format!("ER = {all}"))?;
    // middle two of four equal-count bins
    let n = t.len();
    let mid = energy_resolution(&t[n / 4..3 * n / 4], &r[n / 4..3 * n / 4]);
    ensure(mid.is_finite() && mid <= 1.5 * all, || {
        format!("mid-bin ER {mid:.3} vs all-bin ER {all:.3}")
    })?;
    for c in [0.25, 2.0, 1024.0] {
        let ts: Vec<f64> = t.iter().map(|v| c * v).collect();
        let rs: Vec<f64> = r.iter().map(|v| c * v).collect();
        let scaled = energy_resolution(&ts, &rs);
        ensure(scaled == all, || format!("scale {c}: {scaled} vs {all}"))?;
    }
    let ts: Vec<f64> = t.iter().map(|v| 3.7 * v).collect();
    let rs: Vec<f64> = r.iter().map(|v| 3.7 * v).collect();
    let drift = (energy_resolution(&ts, &rs) - all).abs() / all;
    ensure(drift < 1e-13, || format!("scale 3.7 changes ER by {drift:e}"))?;
    Ok(format!(
        "{} test showers: ER {all:.3}, mid-bin ER {mid:.3}; scale-invariant",
        n
    ))
}

// 12. Molière sampling ---------------------------------------------------------

fn c12_moliere() -> Check {
    let cfg = GenConfig::default();
    let (energy, dz) = (300.0, 1293.0);
    let s = cfg.mean_sq_angle(energy, dz);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 100_000;
    let mut x: Vec<f64> = (0..n).map(|_| sample_scatter(energy, dz, &cfg, &mut rng)).collect();
    x.sort_by(f64::total_cmp);
    let cdf = |t: f64| 1.0 - (-t * t / s).exp();
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
        })
        .fold(0.0f64, f64::max);
    // asymptotic Kolmogorov critical value at 0.01
    let critical = 1.6276 / (n as f64).sqrt();
    ensure(d < critical, || format!("KS D = {d:.5} ≥ {critical:.5}"))?;

    let consts = GraphConfig::default().moliere;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..200 {
        let up = BaseTrack::new(
            2 * i,
            0.0,
            0.0,
            plane_z(rng.random_range(0..20)),
            rng.random_range(-0.2..0.2),
            0.0,
        );
        let dz_planes = rng.random_range(1..30);
        let dtheta = rng.random_range(1e-3..5e-2f64);
        let psi = rng.random_range(0.0..std::f64::consts::TAU);
        let zb = up.z + plane_z(dz_planes);
        let down = BaseTrack::new(
            2 * i + 1,
            10.0,
            -5.0,
            zb,
            up.tx + dtheta * psi.cos(),
            up.ty + dtheta * psi.sin(),
        );
        let (e, _) = pair_energy_likeliness(&up, &down, &consts, false).map_err(|e| e.to_string())?;
        let dz_mm = (zb - up.z) / 1000.0;
        let analytic = consts.critical_energy / consts.beta * (dz_mm / consts.radiation_length).sqrt() / dtheta;
        if (1.0..=1e5).contains(&analytic) {
            worst = worst.max((e - analytic).abs() / analytic);
        }
    }
    ensure(worst <= 0.01, || format!("MLE off by {:.3}%", 100.0 * worst))?;
    Ok(format!("KS D = {d:.5} (< {critical:.5}); MLE max rel dev {worst:.1e}"))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let desk = scratch.path().join("desk");
    let det = scratch.path().join("determinism");
    std::fs::create_dir_all(&det).expect("temporary directory");

    let checks: Vec<Criterion> = vec![
        ("integral distance vs quadrature", Box::new(c1_int_dist)),
        ("gradient check", Box::new(c2_gradients)),
        ("receptive field", Box::new(c3_receptive_field)),
        ("focal loss", Box::new(c4_focal)),
        ("ROC-AUC vs brute force", Box::new(c5_auc)),
        ("Kruskal vs Prim", Box::new(c6_mst)),
        ("planted partition", Box::new(c7_planted)),
        ("shower categories", Box::new(c8_categories)),
        ("end-to-end desk run", Box::new(move || c9_end_to_end(&desk))),
        ("energy resolution", Box::new(c10_energy)),
        ("pipeline determinism", Box::new(move || c11_determinism(&det))),
        ("Molière sampling and pair MLE", Box::new(c12_moliere)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
