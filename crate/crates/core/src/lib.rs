//! Segmentation of overlapping electromagnetic showers in emulsion cloud
//! chamber bricks.
//!
//! The pipeline stages are:
//!
//! 1. **tracks** – base-track data model, CSV I/O and dataset splitting.
//! 2. **toygen** – synthetic showers with Molière multiple scattering.
//! 3. **graphbuild** – integral-distance kNN graph with vertex and edge features.
//! 4. **gnn** – EdgeConv / EmulsionConv edge classifier trained with focal loss.
//! 5. **ewscam** – Kruskal-based hierarchical clustering on edge probabilities.
//! 6. **recon** – shower categories, axis and energy estimation, cluster quality.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod ewscam;
pub mod gnn;
pub mod graphbuild;
pub mod recon;
pub mod toygen;
pub mod tracks;

pub use error::{Error, Result};
pub use ewscam::{ClusterParams, CondensedTree};
pub use gnn::{GnnModel, ModelConfig, TrainConfig};
pub use graphbuild::{EdgeFeatures, GraphConfig, TrackGraph, VertexFeatures};
pub use recon::ShowerOutcome;
pub use toygen::{GenConfig, ShowerTruth};
pub use tracks::{BaseTrack, Brick, DatasetSplit};

/// Label used both for unlabeled tracks and for clustering noise.
pub const NOISE: i64 = -1;
