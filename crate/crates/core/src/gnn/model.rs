use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BlockParams, BoundModel, Dense, EncoderParams, GraphIndex, HeadParams, PreparedGraph};
use super::{forward_logits, ModelConfig};
use crate::autodiff::{sigmoid, Matrix, Tape};
use crate::graphbuild::{EdgeFeatures, TrackGraph, VertexFeatures};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "emucascade-gnn";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Edge,
    Emulsion,
}

/// Robust per-feature standardization followed by `asinh` squashing, so the
/// heavy-tailed geometric features enter the network at unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub vertex_center: Vec<f64>,
    pub vertex_scale: Vec<f64>,
    pub edge_center: Vec<f64>,
    pub edge_scale: Vec<f64>,
}

fn median_and_spread(mut v: Vec<f64>) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
    };
    let med = q(0.5);
    let mut spread = (q(0.75) - q(0.25)) / 1.349;
    if !(spread > 1e-12) {
        let mean_abs = v.iter().map(|x| (x - med).abs()).sum::<f64>() / v.len() as f64;
        spread = if mean_abs > 1e-12 { mean_abs } else { 1.0 };
    }
    (med, spread)
}

impl FeatureScaler {
    pub fn identity() -> Self {
        Self {
            vertex_center: vec![0.0; VertexFeatures::DIM],
            vertex_scale: vec![1.0; VertexFeatures::DIM],
            edge_center: vec![0.0; EdgeFeatures::DIM],
            edge_scale: vec![1.0; EdgeFeatures::DIM],
        }
    }

    pub fn fit<'a, I: IntoIterator<Item = &'a TrackGraph>>(graphs: I) -> Self {
        let graphs: Vec<&TrackGraph> = graphs.into_iter().collect();
        let column = |dim: usize, f: &dyn Fn(&TrackGraph, usize) -> Vec<f64>| -> (Vec<f64>, Vec<f64>) {
            (0..dim)
                .map(|c| median_and_spread(graphs.iter().flat_map(|g| f(g, c)).collect()))
                .unzip()
        };
        let (vertex_center, vertex_scale) = column(VertexFeatures::DIM, &|g, c| {
            g.vertex_features.iter().map(|f| f.0[c]).collect()
        });
        let (edge_center, edge_scale) = column(EdgeFeatures::DIM, &|g, c| g.edges.iter().map(|e| e.features.0[c]).collect());
        Self {
            vertex_center,
            vertex_scale,
            edge_center,
            edge_scale,
        }
    }

    fn apply(values: &[f64], center: &[f64], scale: &[f64], out: &mut Vec<f64>) {
        out.extend(values.iter().zip(center).zip(scale).map(|((v, c), s)| ((v - c) / s).asinh()));
    }

    pub fn vertex_matrix(&self, g: &TrackGraph) -> Matrix {
        let mut data = Vec::with_capacity(g.n_vertices() * VertexFeatures::DIM);
        for f in &g.vertex_features {
            Self::apply(&f.0, &self.vertex_center, &self.vertex_scale, &mut data);
        }
        Matrix::from_vec(g.n_vertices(), VertexFeatures::DIM, data)
    }

    pub fn edge_matrix(&self, g: &TrackGraph) -> Matrix {
        let mut data = Vec::with_capacity(g.edges.len() * EdgeFeatures::DIM);
        for e in &g.edges {
            Self::apply(&e.features.0, &self.edge_center, &self.edge_scale, &mut data);
        }
        Matrix::from_vec(g.edges.len(), EdgeFeatures::DIM, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedParam {
    pub fn matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub config: ModelConfig,
    pub scaler: FeatureScaler,
    pub params: Vec<NamedParam>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: GnnModel,
}

fn layer_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = cfg.d_hidden;
    let mut shapes = Vec::new();
    let mut dense = |name: &str, fan_in: usize, fan_out: usize| {
        shapes.push((format!("{name}.w"), fan_in, fan_out));
        shapes.push((format!("{name}.b"), 1, fan_out));
    };
    dense("encoder.vertex", VertexFeatures::DIM, d);
    dense("encoder.edge", EdgeFeatures::DIM, d);
    for (i, kind) in cfg.blocks().iter().enumerate() {
        let tag = match kind {
            BlockKind::Edge => "edgeconv",
            BlockKind::Emulsion => "emulsionconv",
        };
        dense(&format!("block{i}.{tag}.message.0"), 3 * d, d);
        dense(&format!("block{i}.{tag}.message.1"), d, d);
        dense(&format!("block{i}.{tag}.update.0"), 2 * d, d);
        dense(&format!("block{i}.{tag}.update.1"), d, d);
    }
    dense("head.0", 3 * d, d);
    dense("head.1", d, 1);
    shapes
}

impl GnnModel {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(config: ModelConfig, scaler: FeatureScaler) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = layer_shapes(&config)
            .into_iter()
            .map(|(name, rows, cols)| {
                let data = if name.ends_with(".b") {
                    vec![0.0; rows * cols]
                } else {
                    let limit = (6.0 / (rows + cols) as f64).sqrt();
                    (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect()
                };
                NamedParam { name, rows, cols, data }
            })
            .collect();
        Ok(Self { config, scaler, params })
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&NamedParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars: Vec<_> = self.params.iter().map(|p| tape.leaf(p.matrix())).collect();
        let mut it = vars.chunks(2).map(|c| Dense { w: c[0], b: c[1] });
        let mut next = || it.next().expect("parameter layout matches config");
        let encoder = EncoderParams {
            vertex: next(),
            edge: next(),
        };
        let blocks = self
            .config
            .blocks()
            .into_iter()
            .map(|kind| {
                let p = BlockParams {
                    m1: next(),
                    m2: next(),
                    u1: next(),
                    u2: next(),
                };
                (kind, p)
            })
            .collect();
        let head = HeadParams { l1: next(), l2: next() };
        BoundModel {
            encoder,
            blocks,
            head,
            aggregation: self.config.aggregation,
            vars,
        }
    }

    pub fn prepare(&self, g: &TrackGraph) -> PreparedGraph {
        PreparedGraph {
            index: GraphIndex::new(g),
            vertex_inputs: self.scaler.vertex_matrix(g),
            edge_inputs: self.scaler.edge_matrix(g),
            labels: g.labels().map(|l| l.into_iter().map(f64::from).collect()),
        }
    }

    pub fn logits(&self, prepared: &PreparedGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let bound = self.bind(&mut tape);
        let out = forward_logits(&mut tape, &bound, prepared)?;
        Ok(tape.value(out).data.clone())
    }

    /// Edge probabilities in graph edge order.
    pub fn predict(&self, g: &TrackGraph) -> Result<Vec<f64>> {
        Ok(self.logits(&self.prepare(g))?.into_iter().map(sigmoid).collect())
    }

    /// Writes probabilities into the graph's edges.
    pub fn score(&self, g: &mut TrackGraph) -> Result<()> {
        let p = self.predict(g)?;
        for (e, p) in g.edges.iter_mut().zip(p) {
            e.prob = Some(p);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if header.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("not a model file (format `{}`)", header.format)));
        }
        if header.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                header.version
            )));
        }
        let file: ModelFile = serde_json::from_str(text)?;
        let model = file.model;
        let expected = layer_shapes(&model.config);
        let consistent = expected.len() == model.params.len()
            && expected
                .iter()
                .zip(&model.params)
                .all(|((name, r, c), p)| &p.name == name && p.rows == *r && p.cols == *c && p.data.len() == r * c);
        if !consistent {
            return Err(Error::ModelFormat("parameter shapes do not match the stored config".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(self.to_json()?.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
        Self::from_json(&text)
    }
}
