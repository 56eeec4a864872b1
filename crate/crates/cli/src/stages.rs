//! Stage implementations shared by the subcommands and `pipeline`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use emucascade::ewscam::{cluster_into, tree_to_dot, tree_to_json};
use emucascade::gnn::{roc_auc, train_with, EpochRecord, History};
use emucascade::graphbuild::{build_graph, label_from_tracks, load_graph, save_graph};
use emucascade::recon::{
    analyze_brick, build_report, pr_curve, roc_curve, BrickAnalysis, CategoryRates, MetricsReport, PrPoint, ReportConfig,
    RocPoint,
};
use emucascade::toygen::{gen_brick, load_truth, save_truth};
use emucascade::tracks::{brick_file_name, load_tracks, save_tracks, split_dataset};
use emucascade::{Brick, ClusterParams, GenConfig, GnnModel, GraphConfig, ModelConfig, ShowerTruth, TrackGraph, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Context};

pub fn truth_file_name(brick_id: i64) -> String {
    format!("truth_{brick_id}.csv")
}

pub fn graph_file_name(brick_id: i64) -> String {
    format!("brick_{brick_id}.jsonl")
}

/// Brick id encoded in a `brick_<id>.*` file name.
pub fn brick_id_of(path: &Path) -> CliResult<i64> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("brick_"))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::validation(format!("{}: file name must be brick_<id>.<ext>", path.display())))
}

/// A brick with its truth and the files they came from.
#[derive(Debug, Clone)]
pub struct BrickData {
    pub brick: Brick,
    pub truths: Vec<ShowerTruth>,
    pub files: Vec<PathBuf>,
}

impl BrickData {
    pub fn id(&self) -> i64 {
        self.brick.brick_id
    }
}

/// Generates `n_bricks` bricks with ids `0..n_bricks` into `dir`.
pub fn generate(cfg: &GenConfig, n_bricks: usize, dir: &Path) -> CliResult<Vec<BrickData>> {
    std::fs::create_dir_all(dir).at(dir)?;
    (0..n_bricks as i64)
        .into_par_iter()
        .map(|id| {
            let (brick, truths) = gen_brick(cfg, id)?;
            let bp = dir.join(brick_file_name(id));
            let tp = dir.join(truth_file_name(id));
            save_tracks(&brick, &bp).at(&bp)?;
            save_truth(&truths, &tp).at(&tp)?;
            Ok(BrickData {
                brick,
                truths,
                files: vec![bp, tp],
            })
        })
        .collect()
}

/// Loads one brick and, when present next to it, its truth file.
pub fn load_brick(path: &Path) -> CliResult<BrickData> {
    let brick = load_tracks(path).at(path)?;
    let mut files = vec![path.to_path_buf()];
    let tp = path.with_file_name(truth_file_name(brick.brick_id));
    let truths = if tp.is_file() {
        files.push(tp.clone());
        load_truth(&tp, &brick).at(&tp)?
    } else {
        Vec::new()
    };
    Ok(BrickData { brick, truths, files })
}

/// Every `brick_<id>.csv` of a directory, ordered by id.
pub fn load_brick_dir(dir: &Path) -> CliResult<Vec<BrickData>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let p = entry.at(dir)?.path();
        let is_brick = p.extension().is_some_and(|e| e == "csv") && brick_id_of(&p).is_ok();
        if is_brick {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(CliError::validation(format!("{}: no brick_<id>.csv files", dir.display())));
    }
    let mut data: Vec<BrickData> = paths.par_iter().map(|p| load_brick(p)).collect::<CliResult<_>>()?;
    data.sort_by_key(BrickData::id);
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<i64>,
    pub val: Vec<i64>,
    pub test: Vec<i64>,
}

/// Explicit counts take bricks in id order; otherwise the seeded
/// 34/33/33 split is used.
pub fn split_ids(ids: &[i64], counts: [usize; 3], seed: u64) -> CliResult<SplitIds> {
    if counts == [0, 0, 0] {
        let s = split_dataset(ids.to_vec(), seed)?;
        let sorted = |mut v: Vec<i64>| {
            v.sort_unstable();
            v
        };
        return Ok(SplitIds {
            train: sorted(s.train),
            val: sorted(s.val),
            test: sorted(s.test),
        });
    }
    let [a, b, c] = counts;
    if a + b + c > ids.len() {
        return Err(CliError::validation(format!(
            "split needs {} bricks, found {}",
            a + b + c,
            ids.len()
        )));
    }
    Ok(SplitIds {
        train: ids[..a].to_vec(),
        val: ids[a..a + b].to_vec(),
        test: ids[a + b..a + b + c].to_vec(),
    })
}

/// Builds a graph and labels its edges from the brick's shower ids when the
/// brick carries truth.
pub fn build_labeled(brick: &Brick, cfg: &GraphConfig) -> CliResult<TrackGraph> {
    let mut g = build_graph(brick, cfg)?;
    if brick.has_truth() {
        label_from_tracks(&mut g)?;
    }
    Ok(g)
}

pub fn write_graphs(graphs: &[(i64, &TrackGraph)], dir: &Path) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).at(dir)?;
    graphs
        .par_iter()
        .map(|(id, g)| {
            let p = dir.join(graph_file_name(*id));
            save_graph(g, &p).at(&p)?;
            Ok(p)
        })
        .collect()
}

pub fn read_graphs(paths: &[PathBuf]) -> CliResult<Vec<(i64, TrackGraph)>> {
    paths
        .par_iter()
        .map(|p| Ok((brick_id_of(p)?, load_graph(p).at(p)?)))
        .collect()
}

/// Shower id of every graph vertex, looked up by track id in the brick.
pub fn truth_of_vertex(brick: &Brick, g: &TrackGraph) -> CliResult<Vec<i64>> {
    let by_id: HashMap<i64, i64> = brick.tracks.iter().map(|t| (t.track_id, t.shower_id)).collect();
    g.tracks
        .iter()
        .map(|t| {
            by_id.get(&t.track_id).copied().ok_or_else(|| {
                CliError::validation(format!(
                    "track {} of the graph is not in brick {}",
                    t.track_id, brick.brick_id
                ))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_early: bool,
    pub final_train_loss: f64,
    pub n_parameters: usize,
}

impl TrainingSummary {
    pub fn of(h: &History, model: &GnnModel) -> Self {
        Self {
            epochs_run: h.epochs.len(),
            best_epoch: h.best_epoch,
            best_val_auc: h.best_val_auc,
            stopped_early: h.stopped_early,
            final_train_loss: h.epochs.last().map_or(f64::NAN, |e| e.train_loss),
            n_parameters: model.n_parameters(),
        }
    }
}

pub fn train_model(
    train: &[TrackGraph],
    val: &[TrackGraph],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    verbose: bool,
) -> CliResult<(GnnModel, History)> {
    let report = |r: &EpochRecord| {
        if verbose {
            eprintln!("epoch {:>4}  loss {:.6}  val auc {:.5}", r.epoch, r.train_loss, r.val_auc);
        }
    };
    Ok(train_with(train, val, model_cfg, train_cfg, report)?)
}

/// Pooled edge ROC-AUC over labeled, scored graphs.
pub fn edge_auc(graphs: &[&TrackGraph]) -> Option<f64> {
    let (s, y) = pooled_edges(graphs);
    roc_auc(&s, &y).ok()
}

fn pooled_edges(graphs: &[&TrackGraph]) -> (Vec<f64>, Vec<u8>) {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for g in graphs {
        for e in &g.edges {
            if let (Some(p), Some(y)) = (e.prob, e.label) {
                scores.push(p);
                labels.push(y);
            }
        }
    }
    (scores, labels)
}

pub fn edge_curves(graphs: &[&TrackGraph]) -> Option<(Vec<RocPoint>, Vec<PrPoint>)> {
    let (s, y) = pooled_edges(graphs);
    Some((roc_curve(&s, &y).ok()?, pr_curve(&s, &y).ok()?))
}

pub fn cluster_all(graphs: &mut [(i64, TrackGraph)], params: &ClusterParams) -> CliResult<Vec<emucascade::ewscam::Clustering>> {
    graphs
        .par_iter_mut()
        .map(|(id, g)| cluster_into(g, params).map_err(|e| CliError::from(e).in_stage(&format!("cluster brick {id}"))))
        .collect()
}

/// Writes `trees/brick_<id>.dot` and `.json` for each clustering.
pub fn write_trees(dir: &Path, trees: &[(i64, &emucascade::CondensedTree)]) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).at(dir)?;
    let mut out = Vec::new();
    for (id, tree) in trees {
        let dot = dir.join(format!("brick_{id}.dot"));
        std::fs::write(&dot, tree_to_dot(tree)).at(&dot)?;
        let json = dir.join(format!("brick_{id}.json"));
        std::fs::write(&json, tree_to_json(tree)?).at(&json)?;
        out.push(dot);
        out.push(json);
    }
    Ok(out)
}

/// A clustered graph with the brick it came from.
pub struct Evaluated<'a> {
    pub data: &'a BrickData,
    pub graph: &'a TrackGraph,
}

pub fn analyze(e: &Evaluated<'_>) -> CliResult<BrickAnalysis> {
    if !e.data.brick.has_truth() {
        return Err(CliError::validation(format!("brick {} carries no shower truth", e.data.id())));
    }
    let truth = truth_of_vertex(&e.data.brick, e.graph)?;
    Ok(analyze_brick(e.data.id(), e.graph, &truth, &e.data.truths)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub rates: CategoryRates,
    pub n_clusters: usize,
    pub energy_resolution: Option<f64>,
}

/// Re-clusters every graph at each threshold and records category rates
/// over `test` and the energy resolution of a model fitted on `fit`.
pub fn threshold_sweep(
    fit: &[Evaluated<'_>],
    test: &[Evaluated<'_>],
    params: &ClusterParams,
    thresholds: &[f64],
) -> CliResult<Vec<SweepRow>> {
    thresholds
        .iter()
        .map(|&threshold| {
            let p = ClusterParams {
                threshold,
                ..params.clone()
            };
            let redo = |set: &[Evaluated<'_>]| -> CliResult<(Vec<BrickAnalysis>, usize)> {
                let done: Vec<(BrickAnalysis, usize)> = set
                    .par_iter()
                    .map(|e| {
                        let mut g = e.graph.clone();
                        let c = cluster_into(&mut g, &p)?;
                        Ok((analyze(&Evaluated { data: e.data, graph: &g })?, c.n_clusters()))
                    })
                    .collect::<CliResult<_>>()?;
                let n = done.iter().map(|d| d.1).sum();
                Ok((done.into_iter().map(|d| d.0).collect(), n))
            };
            let (fit_a, _) = redo(fit)?;
            let (test_a, n_clusters) = redo(test)?;
            let quick = ReportConfig {
                n_resamples: 0,
                ..ReportConfig::default()
            };
            let r = build_report(&fit_a, &test_a, &quick)?;
            let outcomes: Vec<_> = test_a.iter().flat_map(|b| b.outcomes.iter().cloned()).collect();
            Ok(SweepRow {
                threshold,
                rates: CategoryRates::of(&outcomes),
                n_clusters,
                energy_resolution: r.aggregate.energy_resolution.map(|e| e.value),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentages {
    pub recovered: f64,
    pub broken: f64,
    pub stuck: f64,
    pub lost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAuc {
    pub val: Option<f64>,
    pub test: Option<f64>,
}

/// Content of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub split: SplitIds,
    pub training: Option<TrainingSummary>,
    pub edge_auc: EdgeAuc,
    pub cluster: ClusterParams,
    pub percentages: Percentages,
    pub sweep: Vec<SweepRow>,
    pub report: MetricsReport,
}

impl RunMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: not a metrics file: {e}", path.display())))
    }
}

/// Report over `test`, energy model fitted on `fit`.
pub fn evaluate(fit: &[Evaluated<'_>], test: &[Evaluated<'_>], cfg: &ReportConfig) -> CliResult<MetricsReport> {
    let analyses = |set: &[Evaluated<'_>]| -> CliResult<Vec<BrickAnalysis>> { set.par_iter().map(analyze).collect() };
    let fit_a = analyses(fit)?;
    let test_a = analyses(test)?;
    Ok(build_report(&fit_a, &test_a, cfg)?)
}

pub fn percentages(report: &MetricsReport) -> Percentages {
    let a = &report.aggregate;
    Percentages {
        recovered: 100.0 * a.recovered.value,
        broken: 100.0 * a.broken.value,
        stuck: 100.0 * a.stuck.value,
        lost: 100.0 * a.lost.value,
    }
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    s
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("threshold,recall,precision\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.recall, p.precision);
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("threshold,recovered,broken,stuck,lost,n_clusters,energy_resolution\n");
    for r in rows {
        let er = r.energy_resolution.map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.threshold, r.rates.recovered, r.rates.broken, r.rates.stuck, r.rates.lost, r.n_clusters, er
        );
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> CliResult<PathBuf> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    std::fs::write(path, text).at(path)?;
    Ok(path.to_path_buf())
}
