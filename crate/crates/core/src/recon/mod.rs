//! Reconstruction metrics: shower outcome categories, axis estimation,
//! energy regression, cluster-quality classification and bootstrap errors.

mod energy;
mod quality;
mod report;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use energy::{boxcox, fit_boxcox, huber_fit, BoxCox, EnergyModel, KernelQuantile, HUBER_DELTA, QUANTILE_WINDOW};
pub use quality::{
    average_precision, confusion_rates, cross_val_scores, pr_curve, roc_curve, PrPoint, QualityClassifier, RocPoint, Stump,
};
pub use report::{
    analyze_brick, build_report, energy_bins, AggregateMetrics, AxisErrors, BrickAnalysis, BrickMetrics, Curves, EnergyBin,
    Estimate, MetricsReport, RecoveredShower, ReportConfig,
};

use crate::graphbuild::TrackGraph;
use crate::tracks::{BaseTrack, PLANE_TOLERANCE};
use crate::{Error, Result, NOISE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Recovered,
    Broken,
    Stuck,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowerOutcome {
    pub shower_id: i64,
    pub category: Category,
    /// Cluster holding most of the shower's tracks.
    pub matched_cluster_id: Option<i64>,
    pub n_tracks: usize,
    /// Tracks of the shower in the matched cluster.
    pub n_matched: usize,
}

/// Assigns each truth shower one category. With `c1 ≥ c2` the two largest
/// per-cluster counts of a shower's tracks (noise excluded) and `n` its
/// size, the rules apply in order: broken if `c2 > 0` and `c1/c2 < 2`; lost
/// if all clusters together hold under 10% of the tracks; recovered if
/// `c1 > 0.9·n`; stuck otherwise.
pub fn categorize_showers(truth: &[i64], labels: &[i64]) -> Result<Vec<ShowerOutcome>> {
    if truth.len() != labels.len() {
        return Err(Error::LabelMismatch(format!(
            "{} truth labels for {} cluster labels",
            truth.len(),
            labels.len()
        )));
    }
    let mut per_shower: BTreeMap<i64, (usize, BTreeMap<i64, usize>)> = BTreeMap::new();
    for (&s, &c) in truth.iter().zip(labels) {
        if s == NOISE {
            continue;
        }
        let entry = per_shower.entry(s).or_default();
        entry.0 += 1;
        if c != NOISE {
            *entry.1.entry(c).or_default() += 1;
        }
    }
    Ok(per_shower
        .into_iter()
        .map(|(shower_id, (n, counts))| {
            let mut ranked: Vec<(usize, i64)> = counts.iter().map(|(&c, &k)| (k, c)).collect();
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let c1 = ranked.first().map_or(0, |r| r.0);
            let c2 = ranked.get(1).map_or(0, |r| r.0);
            let clustered: usize = ranked.iter().map(|r| r.0).sum();
            let category = if c2 > 0 && (c1 as f64) < 2.0 * c2 as f64 {
                Category::Broken
            } else if 10 * clustered < n {
                Category::Lost
            } else if 10 * c1 > 9 * n {
                Category::Recovered
            } else {
                Category::Stuck
            };
            ShowerOutcome {
                shower_id,
                category,
                matched_cluster_id: ranked.first().map(|r| r.1),
                n_tracks: n,
                n_matched: c1,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryRates {
    pub recovered: f64,
    pub broken: f64,
    pub stuck: f64,
    pub lost: f64,
}

impl CategoryRates {
    pub fn of(outcomes: &[ShowerOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        let frac = |c: Category| outcomes.iter().filter(|o| o.category == c).count() as f64 / n;
        Self {
            recovered: frac(Category::Recovered),
            broken: frac(Category::Broken),
            stuck: frac(Category::Stuck),
            lost: frac(Category::Lost),
        }
    }
}

/// Shower start point and direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub tx: f64,
    pub ty: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Origin at the most upstream plane of the cluster, positioned at the
/// median of that plane's tracks, with the median slopes of the ten most
/// upstream tracks.
pub fn estimate_axis(tracks: &[&BaseTrack]) -> Result<Axis> {
    if tracks.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut sorted = tracks.to_vec();
    sorted.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.track_id.cmp(&b.track_id)));
    let z0 = sorted[0].z;
    let first: Vec<&BaseTrack> = sorted.iter().copied().take_while(|t| t.z - z0 <= PLANE_TOLERANCE).collect();
    let early = &sorted[..sorted.len().min(10)];
    let pick = |set: &[&BaseTrack], f: fn(&BaseTrack) -> f64| median(&set.iter().map(|t| f(t)).collect::<Vec<_>>());
    Ok(Axis {
        x: pick(&first, |t| t.x),
        y: pick(&first, |t| t.y),
        z: z0,
        tx: pick(early, |t| t.tx),
        ty: pick(early, |t| t.ty),
    })
}

/// Mean absolute deviation about the median.
pub fn mae_metric(values: &[f64]) -> f64 {
    let m = median(values);
    values.iter().map(|v| (v - m).abs()).sum::<f64>() / values.len() as f64
}

/// Mean absolute residual.
pub fn mae_vs_truth(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64
}

pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Sample standard deviation of `(E_true − E_rec)/E_true`.
pub fn energy_resolution(e_true: &[f64], e_rec: &[f64]) -> f64 {
    let rel: Vec<f64> = e_true.iter().zip(e_rec).map(|(t, r)| (t - r) / t).collect();
    sample_std(&rel)
}

/// Bootstrap mean and standard deviation of `metric`. Resample `i` draws
/// from its own stream of a generator seeded with `seed`.
pub fn bootstrap_ci<T, F>(data: &[T], metric: F, n_resamples: usize, seed: u64) -> (f64, f64)
where
    T: Clone + Send + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    if data.is_empty() || n_resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let values: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let sample: Vec<T> = (0..data.len())
                .map(|_| data[rng.random_range(0..data.len())].clone())
                .collect();
            metric(&sample)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = if values.len() > 1 { sample_std(&values) } else { 0.0 };
    (mean, std)
}

/// Adjusted Rand index between two labelings; every label value, noise
/// included, is its own class.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let comb2 = |k: usize| (k * k.saturating_sub(1) / 2) as f64;
    let mut joint: HashMap<(i64, i64), usize> = HashMap::new();
    let mut ra: HashMap<i64, usize> = HashMap::new();
    let mut rb: HashMap<i64, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&k| comb2(k)).sum();
    let sa: f64 = ra.values().map(|&k| comb2(k)).sum();
    let sb: f64 = rb.values().map(|&k| comb2(k)).sum();
    let total = comb2(a.len());
    if total == 0.0 {
        return 1.0;
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Per-cluster features for the quality classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: i64,
    pub size: usize,
    pub z_length: f64,
    pub mean_prob: f64,
    /// Mean transverse distance of the cluster's tracks from its axis line.
    pub axis_residual: f64,
}

impl ClusterSummary {
    pub const N_FEATURES: usize = 4;

    pub fn features(&self) -> [f64; 4] {
        [self.size as f64, self.z_length, self.mean_prob, self.axis_residual]
    }
}

/// Summaries of every non-noise cluster in a clustered, scored graph,
/// ordered by cluster id.
pub fn cluster_summaries(g: &TrackGraph, labels: &[i64]) -> Result<Vec<ClusterSummary>> {
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (v, &c) in labels.iter().enumerate() {
        if c != NOISE {
            members.entry(c).or_default().push(v);
        }
    }
    let mut prob_sum: HashMap<i64, (f64, usize)> = HashMap::new();
    for e in &g.edges {
        let (a, b) = (labels[e.src], labels[e.dst]);
        if a != NOISE && a == b {
            let p = e.prob.ok_or(Error::MissingProbability {
                src: g.tracks[e.src].track_id,
                dst: g.tracks[e.dst].track_id,
            })?;
            let s = prob_sum.entry(a).or_default();
            s.0 += p;
            s.1 += 1;
        }
    }
    members
        .into_iter()
        .map(|(cluster_id, vs)| {
            let tracks: Vec<&BaseTrack> = vs.iter().map(|&v| &g.tracks[v]).collect();
            let axis = estimate_axis(&tracks)?;
            let (zmin, zmax) = tracks
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.z), hi.max(t.z)));
            let residual = tracks
                .iter()
                .map(|t| {
                    let dz = t.z - axis.z;
                    (t.x - axis.x - axis.tx * dz).hypot(t.y - axis.y - axis.ty * dz)
                })
                .sum::<f64>()
                / tracks.len() as f64;
            let mean_prob = prob_sum.get(&cluster_id).map_or(0.0, |&(s, k)| s / k as f64);
            Ok(ClusterSummary {
                cluster_id,
                size: tracks.len(),
                z_length: zmax - zmin,
                mean_prob,
                axis_residual: residual,
            })
        })
        .collect()
}
