//! Edge classifier.
//!
//! Vertex and edge features are encoded into `d_hidden`-wide states, pushed
//! through a stack of EdgeConv and EmulsionConv message-passing blocks, and
//! scored per edge by a dense head on `[h_src, h_dst, e]`.
//!
//! EdgeConv sends `M(h_v, h_w − h_v, e_vw)` along every edge at once.
//! EmulsionConv visits the emulsion planes in increasing depth and updates
//! the vertices of one plane at a time from `M(h_v, h_w, e_vw)`, so sources
//! already carry this pass's update and a single block spans the brick.

mod layers;
mod metrics;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use layers::{
    classifier_forward, edgeconv_forward, emulsionconv_forward, encode, forward_logits, BlockParams, BoundModel, Dense,
    EncoderParams, GraphIndex, HeadParams, PlaneGroup, PreparedGraph,
};
pub use metrics::roc_auc;
pub use model::{BlockKind, FeatureScaler, GnnModel, NamedParam, MODEL_FORMAT, MODEL_VERSION};
pub use train::{pooled_auc, train, train_with, Adam, EarlyStopping, EpochRecord, History};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    EmulsionFirst,
    EdgeFirst,
    Interleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_hidden: usize,
    pub n_emulsion: usize,
    pub n_edge: usize,
    pub block_order: BlockOrder,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_hidden: 32,
            n_emulsion: 3,
            n_edge: 5,
            block_order: BlockOrder::EmulsionFirst,
            aggregation: Aggregation::Mean,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_hidden == 0 {
            return Err(Error::Config("model: d_hidden must be at least 1".into()));
        }
        if self.n_emulsion + self.n_edge == 0 {
            return Err(Error::Config("model: need at least one message-passing block".into()));
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<BlockKind> {
        let em = std::iter::repeat_n(BlockKind::Emulsion, self.n_emulsion);
        let ed = std::iter::repeat_n(BlockKind::Edge, self.n_edge);
        match self.block_order {
            BlockOrder::EmulsionFirst => em.chain(ed).collect(),
            BlockOrder::EdgeFirst => ed.chain(em).collect(),
            BlockOrder::Interleaved => {
                let mut out = Vec::with_capacity(self.n_emulsion + self.n_edge);
                let (mut a, mut b) = (self.n_emulsion, self.n_edge);
                while a + b > 0 {
                    if a > 0 {
                        out.push(BlockKind::Emulsion);
                        a -= 1;
                    }
                    if b > 0 {
                        out.push(BlockKind::Edge);
                        b -= 1;
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub gamma_focal: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 5000,
            patience: 100,
            gamma_focal: 3.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("train: lr must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train: patience must be at least 1".into()));
        }
        if !(self.gamma_focal >= 0.0) {
            return Err(Error::Config("train: gamma_focal must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Mean focal loss of edge probabilities against 0/1 labels, with
/// probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn focal_loss(p: &[f64], y: &[u8], gamma: f64) -> f64 {
    use crate::autodiff::PROB_CLAMP;
    if p.is_empty() {
        return 0.0;
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let pt = if y == 1 { p } else { 1.0 - p };
            -(1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    total / p.len() as f64
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{focal_term, Matrix, Tape};

    #[test]
    fn focal_loss_values() {
        assert!(focal_loss(&[1.0], &[1], 3.0) < 1e-20);
        assert!(focal_loss(&[0.0], &[0], 3.0) < 1e-20);
        let v = focal_loss(&[0.5], &[1], 3.0);
        assert!((v - 0.125 * 2f64.ln()).abs() < 1e-12);
        assert!((v - 0.086_643_397_569_993).abs() < 1e-9);
        let ce = -(0.3f64).ln();
        assert!((focal_loss(&[0.3], &[1], 0.0) - ce).abs() < 1e-15);
    }

    #[test]
    fn tape_focal_matches_scalar_form() {
        let logits = [-2.0, -0.1, 0.0, 0.7, 3.0];
        let labels = [0u8, 1, 1, 0, 1];
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::from_vec(5, 1, logits.to_vec()));
        let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
        let l = tape.focal_loss(z, &y, 3.0).unwrap();
        let p: Vec<f64> = logits.iter().map(|&v| crate::autodiff::sigmoid(v)).collect();
        assert!((tape.value(l).data[0] - focal_loss(&p, &labels, 3.0)).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_gradient_at_half() {
        let (_, g) = focal_term(0.0, 1.0, 0.0);
        assert!((g + 0.5).abs() < 1e-15);
    }

    #[test]
    fn block_orders() {
        use BlockKind::*;
        let mut cfg = ModelConfig {
            n_emulsion: 2,
            n_edge: 3,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.blocks(), vec![Emulsion, Emulsion, Edge, Edge, Edge]);
        cfg.block_order = BlockOrder::EdgeFirst;
        assert_eq!(cfg.blocks(), vec![Edge, Edge, Edge, Emulsion, Emulsion]);
        cfg.block_order = BlockOrder::Interleaved;
        assert_eq!(cfg.blocks(), vec![Emulsion, Edge, Emulsion, Edge, Edge]);
    }
}
