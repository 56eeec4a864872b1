use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::PreparedGraph;
use super::model::{FeatureScaler, GnnModel, NamedParam};
use super::{forward_logits, roc_auc, ModelConfig, TrainConfig};
use crate::autodiff::{sigmoid, Tape};
use crate::graphbuild::TrackGraph;
use crate::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    fn step_params(&mut self, params: &mut [NamedParam], grads: &[Vec<f64>]) {
        let mut flat: Vec<Vec<f64>> = params.iter_mut().map(|p| std::mem::take(&mut p.data)).collect();
        self.step(&mut flat, grads);
        for (p, d) in params.iter_mut().zip(flat) {
            p.data = d;
        }
    }
}

/// Stops when the monitored metric has not improved for `patience` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records a metric value; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        if metric > self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_early: bool,
}

fn labeled(model: &GnnModel, graphs: &[TrackGraph], split: &'static str) -> Result<Vec<PreparedGraph>> {
    let prepared: Vec<PreparedGraph> = graphs
        .iter()
        .filter(|g| !g.edges.is_empty())
        .map(|g| {
            let p = model.prepare(g);
            if p.labels.is_none() {
                return Err(Error::InsufficientData(format!("{split} graph has unlabeled edges")));
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;
    if prepared.is_empty() {
        return Err(Error::EmptySplit(split));
    }
    Ok(prepared)
}

/// ROC-AUC of the model over the pooled edges of several graphs.
pub fn pooled_auc(model: &GnnModel, graphs: &[PreparedGraph]) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for g in graphs {
        scores.extend(model.logits(g)?.into_iter().map(sigmoid));
        labels.extend(g.labels.as_ref().expect("labeled").iter().map(|&y| y as u8));
    }
    roc_auc(&scores, &labels)
}

/// One optimization step per training graph and epoch; keeps the checkpoint
/// with the best validation ROC-AUC.
pub fn train(
    train_graphs: &[TrackGraph],
    val_graphs: &[TrackGraph],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(GnnModel, History)> {
    train_with(train_graphs, val_graphs, model_cfg, train_cfg, |_| {})
}

pub fn train_with(
    train_graphs: &[TrackGraph],
    val_graphs: &[TrackGraph],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(GnnModel, History)> {
    train_cfg.validate()?;
    if train_graphs.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val_graphs.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let scaler = FeatureScaler::fit(train_graphs);
    let mut model = GnnModel::new(model_cfg.clone(), scaler)?;
    let train_set = labeled(&model, train_graphs, "train")?;
    let val_set = labeled(&model, val_graphs, "validation")?;

    let sizes: Vec<usize> = model.params.iter().map(|p| p.data.len()).collect();
    let mut adam = Adam::new(train_cfg.lr, &sizes);
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.clone();
    let mut history = History::default();

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let g = &train_set[i];
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let logits = forward_logits(&mut tape, &bound, g)?;
            let loss = tape.focal_loss(logits, g.labels.as_ref().expect("labeled"), train_cfg.gamma_focal)?;
            loss_sum += tape.value(loss).data[0];
            let mut grads = tape.backward(loss)?;
            let flat: Vec<Vec<f64>> = bound
                .vars
                .iter()
                .zip(&sizes)
                .map(|(&v, &n)| grads.take(v).map_or_else(|| vec![0.0; n], |m| m.data))
                .collect();
            adam.step_params(&mut model.params, &flat);
        }
        let val_auc = pooled_auc(&model, &val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_auc,
        };
        on_epoch(&record);
        history.epochs.push(record);
        let (improved, stop) = stopper.observe(epoch, val_auc);
        if improved {
            best = model.clone();
        }
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    history.best_val_auc = stopper.best;
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut adam = Adam::new(1e-3, &[3]);
        let mut p = vec![vec![1.0, -2.0, 0.5]];
        adam.step(&mut p, &[vec![0.0; 3]]);
        assert_eq!(p[0], vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [1e-3, 0.5, 7.0, -3.0] {
            let mut adam = Adam::new(1e-3, &[1]);
            let mut p = vec![vec![0.0]];
            adam.step(&mut p, &[vec![g]]);
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p[0][0] - expected).abs() < 1e-15);
            assert!((p[0][0].abs() - 1e-3).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut adam = Adam::new(1e-2, &[2]);
            let mut p = vec![vec![0.3, 0.4]];
            for k in 0..10 {
                adam.step(&mut p, &[vec![k as f64 * 0.1, -0.2]]);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn early_stopping_patience_one() {
        let mut s = EarlyStopping::new(1);
        let metrics = [0.9, 0.8, 0.7, 0.6];
        let mut epochs = 0;
        for (i, m) in metrics.iter().enumerate() {
            epochs += 1;
            if s.observe(i + 1, *m).1 {
                break;
            }
        }
        assert_eq!(epochs, 2);
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn empty_splits_rejected() {
        let cfg = ModelConfig::default();
        let tc = TrainConfig::default();
        assert!(matches!(train(&[], &[], &cfg, &tc), Err(Error::EmptySplit("train"))));
        let g = TrackGraph::default();
        assert!(matches!(
            train(std::slice::from_ref(&g), &[], &cfg, &tc),
            Err(Error::EmptySplit("validation"))
        ));
        assert!(matches!(
            train(std::slice::from_ref(&g), std::slice::from_ref(&g), &cfg, &tc),
            Err(Error::EmptySplit("train"))
        ));
    }
}
