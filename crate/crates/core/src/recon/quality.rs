use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::{Error, Result};

const LEAF_REG: f64 = 1e-3;

/// `x[feature] <= split` takes `left`, otherwise `right`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub split: f64,
    pub left: f64,
    pub right: f64,
}

impl Stump {
    pub fn eval(&self, x: &[f64]) -> f64 {
        if x[self.feature] <= self.split {
            self.left
        } else {
            self.right
        }
    }
}

/// Gradient-boosted decision stumps on logistic loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityClassifier {
    pub base: f64,
    pub shrinkage: f64,
    pub stumps: Vec<Stump>,
}

fn check_classes(y: &[u8]) -> Result<usize> {
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(pos)
}

impl QualityClassifier {
    pub const ROUNDS: usize = 100;
    pub const SHRINKAGE: f64 = 0.1;

    pub fn fit(x: &[Vec<f64>], y: &[u8]) -> Result<Self> {
        Self::fit_with(x, y, Self::ROUNDS, Self::SHRINKAGE)
    }

    pub fn fit_with(x: &[Vec<f64>], y: &[u8], rounds: usize, shrinkage: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LabelMismatch(format!("{} rows for {} labels", x.len(), y.len())));
        }
        let pos = check_classes(y)? as f64;
        let n = y.len();
        let n_features = x[0].len();
        let base = (pos / (n as f64 - pos)).ln();
        let orders: Vec<Vec<usize>> = (0..n_features)
            .map(|j| {
                let mut o: Vec<usize> = (0..n).collect();
                o.sort_by(|&a, &b| x[a][j].total_cmp(&x[b][j]).then(a.cmp(&b)));
                o
            })
            .collect();
        let mut f = vec![base; n];
        let mut stumps = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = (0..n).map(|i| y[i] as f64 - p[i]).collect();
            let h: Vec<f64> = p.iter().map(|p| (p * (1.0 - p)).max(1e-12)).collect();
            let (gt, ht): (f64, f64) = (g.iter().sum(), h.iter().sum());
            let mut best = Stump {
                feature: 0,
                split: f64::INFINITY,
                left: gt / (ht + LEAF_REG),
                right: 0.0,
            };
            let mut best_gain = gt * gt / (ht + LEAF_REG);
            for (j, order) in orders.iter().enumerate() {
                let (mut gl, mut hl) = (0.0, 0.0);
                for w in 0..n - 1 {
                    let (i, next) = (order[w], order[w + 1]);
                    gl += g[i];
                    hl += h[i];
                    if x[i][j] == x[next][j] {
                        continue;
                    }
                    let (gr, hr) = (gt - gl, ht - hl);
                    let gain = gl * gl / (hl + LEAF_REG) + gr * gr / (hr + LEAF_REG);
                    if gain > best_gain {
                        best_gain = gain;
                        best = Stump {
                            feature: j,
                            split: 0.5 * (x[i][j] + x[next][j]),
                            left: gl / (hl + LEAF_REG),
                            right: gr / (hr + LEAF_REG),
                        };
                    }
                }
            }
            for (fi, xi) in f.iter_mut().zip(x) {
                *fi += shrinkage * best.eval(xi);
            }
            stumps.push(best);
        }
        Ok(Self { base, shrinkage, stumps })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.base + self.shrinkage * self.stumps.iter().map(|s| s.eval(x)).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// True-positive and false-positive counts after each distinct threshold,
/// scanning from the highest score down.
fn cumulative_counts(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        if k + 1 == order.len() || scores[order[k + 1]] != scores[i] {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// ROC points from `(0, 0)` to `(1, 1)`; all coordinates lie in `[0, 1]`
/// and both rates are nondecreasing along the curve.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let pos = check_classes(labels)? as f64;
    let neg = labels.len() as f64 - pos;
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    out.extend(cumulative_counts(scores, labels).into_iter().map(|(t, tp, fp)| RocPoint {
        threshold: t,
        fpr: fp as f64 / neg,
        tpr: tp as f64 / pos,
    }));
    Ok(out)
}

pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>> {
    let pos = check_classes(labels)? as f64;
    Ok(cumulative_counts(scores, labels)
        .into_iter()
        .map(|(t, tp, fp)| PrPoint {
            threshold: t,
            recall: tp as f64 / pos,
            precision: tp as f64 / (tp + fp) as f64,
        })
        .collect())
}

/// Precision averaged over recall increments.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let mut last = 0.0;
    let mut ap = 0.0;
    for p in pr_curve(scores, labels)? {
        ap += (p.recall - last) * p.precision;
        last = p.recall;
    }
    Ok(ap)
}

/// `(TPR, FPR, precision)` of a confusion matrix.
pub fn confusion_rates(tp: usize, fn_: usize, fp: usize, tn: usize) -> (f64, f64, f64) {
    let r = |a: usize, b: usize| a as f64 / (a + b) as f64;
    (r(tp, fn_), r(fp, tn), r(tp, fp))
}

/// Out-of-fold scores from `k`-fold cross-validation with folds
/// stratified by class.
pub fn cross_val_scores(x: &[Vec<f64>], y: &[u8], k: usize, seed: u64) -> Result<Vec<f64>> {
    check_classes(y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0usize; y.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if idx.len() < k.min(2) {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} examples, too few for {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            fold[i] = r % k;
        }
    }
    let mut scores = vec![0.0; y.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
        let xs: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ys: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let model = QualityClassifier::fit(&xs, &ys)?;
        for i in (0..y.len()).filter(|&i| fold[i] == f) {
            scores[i] = model.score(&x[i]);
        }
    }
    Ok(scores)
}
