use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    average_precision, bootstrap_ci, categorize_showers, cluster_summaries, cross_val_scores, energy_resolution, estimate_axis,
    mae_metric, mae_vs_truth, pr_curve, roc_curve, Axis, Category, CategoryRates, ClusterSummary, EnergyModel, PrPoint, RocPoint,
    ShowerOutcome,
};
use crate::gnn::roc_auc;
use crate::graphbuild::TrackGraph;
use crate::toygen::ShowerTruth;
use crate::tracks::BaseTrack;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub n_resamples: usize,
    pub seed: u64,
    pub cv_folds: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            n_resamples: 1000,
            seed: 0,
            cv_folds: 3,
        }
    }
}

/// A recovered shower with its reconstructed and true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredShower {
    pub shower_id: i64,
    pub cluster_id: i64,
    pub axis: Axis,
    pub truth: Axis,
    /// Cluster track count and estimated origin depth.
    pub features: [f64; 2],
    pub e_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrickAnalysis {
    pub brick_id: i64,
    pub outcomes: Vec<ShowerOutcome>,
    pub recovered: Vec<RecoveredShower>,
    pub summaries: Vec<ClusterSummary>,
    /// Per summary, 1 when the cluster is the match of a recovered shower.
    pub targets: Vec<u8>,
}

/// Compares a clustered, scored graph with its truth.
pub fn analyze_brick(brick_id: i64, g: &TrackGraph, truth_of_vertex: &[i64], truths: &[ShowerTruth]) -> Result<BrickAnalysis> {
    let labels = g
        .clusters
        .as_ref()
        .ok_or_else(|| Error::LabelMismatch("graph carries no cluster labels".into()))?;
    let outcomes = categorize_showers(truth_of_vertex, labels)?;
    let summaries = cluster_summaries(g, labels)?;
    let by_id: HashMap<i64, &ShowerTruth> = truths.iter().map(|t| (t.shower_id, t)).collect();
    let mut recovered = Vec::new();
    for o in outcomes.iter().filter(|o| o.category == Category::Recovered) {
        let (Some(cid), Some(truth)) = (o.matched_cluster_id, by_id.get(&o.shower_id)) else {
            continue;
        };
        let tracks: Vec<&BaseTrack> = labels
            .iter()
            .zip(&g.tracks)
            .filter(|(&l, _)| l == cid)
            .map(|(_, t)| t)
            .collect();
        let axis = estimate_axis(&tracks)?;
        recovered.push(RecoveredShower {
            shower_id: o.shower_id,
            cluster_id: cid,
            axis,
            truth: Axis {
                x: truth.x,
                y: truth.y,
                z: truth.z,
                tx: truth.tx,
                ty: truth.ty,
            },
            features: [tracks.len() as f64, axis.z],
            e_true: truth.energy,
        });
    }
    let matched: Vec<i64> = recovered.iter().map(|r| r.cluster_id).collect();
    let targets = summaries.iter().map(|s| u8::from(matched.contains(&s.cluster_id))).collect();
    Ok(BrickAnalysis {
        brick_id,
        outcomes,
        recovered,
        summaries,
        targets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisErrors {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub tx: f64,
    pub ty: f64,
}

fn residuals(rec: &[RecoveredShower]) -> [Vec<f64>; 5] {
    let r = |f: fn(&Axis) -> f64| rec.iter().map(|s| f(&s.axis) - f(&s.truth)).collect::<Vec<f64>>();
    [r(|a| a.x), r(|a| a.y), r(|a| a.z), r(|a| a.tx), r(|a| a.ty)]
}

fn axis_errors(rec: &[RecoveredShower], f: fn(&[f64]) -> f64) -> Option<AxisErrors> {
    if rec.is_empty() {
        return None;
    }
    let [x, y, z, tx, ty] = residuals(rec).map(|v| f(&v));
    Some(AxisErrors { x, y, z, tx, ty })
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrickMetrics {
    pub brick_id: i64,
    pub n_showers: usize,
    pub rates: CategoryRates,
    pub energy_resolution: Option<f64>,
    pub mae: Option<AxisErrors>,
    pub mae_vs_truth: Option<AxisErrors>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub energy_resolution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub n_showers: usize,
    pub recovered: Estimate,
    pub broken: Estimate,
    pub stuck: Estimate,
    pub lost: Estimate,
    pub energy_resolution: Option<Estimate>,
    pub energy_bins: Vec<EnergyBin>,
    pub mae: Option<AxisErrors>,
    pub mae_vs_truth: Option<AxisErrors>,
    pub classifier_auc: Option<f64>,
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curves {
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bricks: Vec<BrickMetrics>,
    pub aggregate: AggregateMetrics,
    /// Reasons for metrics that could not be computed.
    pub notes: Vec<String>,
    #[serde(skip)]
    pub curves: Option<Curves>,
}

/// Energy resolution within `n_bins` equal-count bins of true energy.
pub fn energy_bins(e_true: &[f64], e_rec: &[f64], n_bins: usize) -> Vec<EnergyBin> {
    let mut order: Vec<usize> = (0..e_true.len()).collect();
    order.sort_by(|&a, &b| e_true[a].total_cmp(&e_true[b]));
    let n = order.len();
    (0..n_bins)
        .filter_map(|b| {
            let idx = &order[b * n / n_bins..(b + 1) * n / n_bins];
            if idx.is_empty() {
                return None;
            }
            let t: Vec<f64> = idx.iter().map(|&i| e_true[i]).collect();
            let r: Vec<f64> = idx.iter().map(|&i| e_rec[i]).collect();
            Some(EnergyBin {
                lo: t[0],
                hi: t[t.len() - 1],
                n: idx.len(),
                energy_resolution: finite(energy_resolution(&t, &r)),
            })
        })
        .collect()
}

/// Aggregates test-brick analyses. The energy model is fitted on the
/// recovered showers of `train`; the cluster-quality classifier is scored
/// by cross-validation over the pooled test clusters.
pub fn build_report(train: &[BrickAnalysis], test: &[BrickAnalysis], cfg: &ReportConfig) -> Result<MetricsReport> {
    let mut notes = Vec::new();
    let train_rec: Vec<&RecoveredShower> = train.iter().flat_map(|b| &b.recovered).collect();
    let energy = match EnergyModel::fit(
        &train_rec.iter().map(|r| r.features).collect::<Vec<_>>(),
        &train_rec.iter().map(|r| r.e_true).collect::<Vec<_>>(),
    ) {
        Ok(m) => Some(m),
        Err(e) => {
            notes.push(format!("energy model not fitted: {e}"));
            None
        }
    };
    let er_of = |rec: &[RecoveredShower]| -> Option<f64> {
        let m = energy.as_ref()?;
        let t: Vec<f64> = rec.iter().map(|r| r.e_true).collect();
        let p: Vec<f64> = rec.iter().map(|r| m.predict(&r.features)).collect();
        finite(energy_resolution(&t, &p))
    };

    let bricks = test
        .iter()
        .map(|b| BrickMetrics {
            brick_id: b.brick_id,
            n_showers: b.outcomes.len(),
            rates: CategoryRates::of(&b.outcomes),
            energy_resolution: er_of(&b.recovered),
            mae: axis_errors(&b.recovered, mae_metric),
            mae_vs_truth: axis_errors(&b.recovered, mae_vs_truth),
        })
        .collect();

    let outcomes: Vec<Category> = test.iter().flat_map(|b| b.outcomes.iter().map(|o| o.category)).collect();
    let rate = |c: Category, salt: u64| {
        let f = move |s: &[Category]| s.iter().filter(|&&x| x == c).count() as f64 / s.len() as f64;
        let value = if outcomes.is_empty() { 0.0 } else { f(&outcomes) };
        let (_, std) = bootstrap_ci(&outcomes, f, cfg.n_resamples, cfg.seed ^ salt);
        Estimate { value, std: finite(std) }
    };

    let rec: Vec<RecoveredShower> = test.iter().flat_map(|b| b.recovered.iter().cloned()).collect();
    let (energy_estimate, bins) = match (&energy, er_of(&rec)) {
        (Some(m), Some(value)) => {
            let (_, std) = bootstrap_ci(&rec, |s| er_of(s).unwrap_or(f64::NAN), cfg.n_resamples, cfg.seed ^ 5);
            let t: Vec<f64> = rec.iter().map(|r| r.e_true).collect();
            let p: Vec<f64> = rec.iter().map(|r| m.predict(&r.features)).collect();
            (Some(Estimate { value, std: finite(std) }), energy_bins(&t, &p, 4))
        }
        _ => (None, Vec::new()),
    };

    let x: Vec<Vec<f64>> = test
        .iter()
        .flat_map(|b| b.summaries.iter().map(|s| s.features().to_vec()))
        .collect();
    let y: Vec<u8> = test.iter().flat_map(|b| b.targets.iter().copied()).collect();
    let (mut auc, mut ap, mut curves) = (None, None, None);
    match cross_val_scores(&x, &y, cfg.cv_folds, cfg.seed) {
        Ok(scores) => {
            auc = Some(roc_auc(&scores, &y)?);
            ap = Some(average_precision(&scores, &y)?);
            curves = Some(Curves {
                roc: roc_curve(&scores, &y)?,
                pr: pr_curve(&scores, &y)?,
            });
        }
        Err(e) => notes.push(format!("cluster-quality classifier not evaluated: {e}")),
    }

    let aggregate = AggregateMetrics {
        n_showers: outcomes.len(),
        recovered: rate(Category::Recovered, 1),
        broken: rate(Category::Broken, 2),
        stuck: rate(Category::Stuck, 3),
        lost: rate(Category::Lost, 4),
        energy_resolution: energy_estimate,
        energy_bins: bins,
        mae: axis_errors(&rec, mae_metric),
        mae_vs_truth: axis_errors(&rec, mae_vs_truth),
        classifier_auc: auc,
        average_precision: ap,
    };
    Ok(MetricsReport {
        bricks,
        aggregate,
        notes,
        curves,
    })
}
