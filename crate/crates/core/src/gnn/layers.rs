use crate::autodiff::{Matrix, Tape, Var};
use crate::graphbuild::TrackGraph;
use crate::Result;

use super::{Aggregation, BlockKind};

/// Affine map `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: Var,
    pub b: Var,
}

impl Dense {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w)?;
        tape.add_row(xw, self.b)
    }
}

fn mlp2(tape: &mut Tape, first: &Dense, second: &Dense, x: Var) -> Result<Var> {
    let h = first.apply(tape, x)?;
    let h = tape.silu(h);
    second.apply(tape, h)
}

/// Message network `M` and update network `U` of one block, each a
/// two-layer dense net. `U` is residual: `U(h, m) = h + mlp([h, m])`.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub m1: Dense,
    pub m2: Dense,
    pub u1: Dense,
    pub u2: Dense,
}

impl BlockParams {
    fn message(&self, tape: &mut Tape, parts: &[Var]) -> Result<Var> {
        let x = tape.concat(parts)?;
        mlp2(tape, &self.m1, &self.m2, x)
    }

    fn update(&self, tape: &mut Tape, h: Var, m: Var) -> Result<Var> {
        let x = tape.concat(&[h, m])?;
        let delta = mlp2(tape, &self.u1, &self.u2, x)?;
        tape.add(h, delta)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub l1: Dense,
    pub l2: Dense,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    pub vertex: Dense,
    pub edge: Dense,
}

/// Model parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: EncoderParams,
    pub blocks: Vec<(BlockKind, BlockParams)>,
    pub head: HeadParams,
    pub aggregation: Aggregation,
    /// Every parameter variable, in model storage order.
    pub vars: Vec<Var>,
}

/// Edge endpoints and the depth-ordered plane groups of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphIndex {
    pub n_vertices: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Per distinct vertex depth, in increasing order: the vertices on it
    /// and the edges ending on them.
    pub planes: Vec<PlaneGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneGroup {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    /// For each edge of the group, the position of its destination in `vertices`.
    pub local_dst: Vec<usize>,
}

impl GraphIndex {
    pub fn new(g: &TrackGraph) -> Self {
        Self::from_parts(
            g.tracks.iter().map(|t| t.z).collect(),
            g.edges.iter().map(|e| e.src).collect(),
            g.edges.iter().map(|e| e.dst).collect(),
        )
    }

    pub fn from_parts(depth: Vec<f64>, src: Vec<usize>, dst: Vec<usize>) -> Self {
        let n = depth.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| depth[a].total_cmp(&depth[b]).then(a.cmp(&b)));
        let mut group_of = vec![0usize; n];
        let mut planes: Vec<PlaneGroup> = Vec::new();
        let mut last: Option<f64> = None;
        for v in order {
            if last != Some(depth[v]) {
                planes.push(PlaneGroup {
                    vertices: Vec::new(),
                    edges: Vec::new(),
                    local_dst: Vec::new(),
                });
                last = Some(depth[v]);
            }
            group_of[v] = planes.len() - 1;
            planes.last_mut().expect("group pushed above").vertices.push(v);
        }
        let mut position = vec![0usize; n];
        for p in &planes {
            for (i, &v) in p.vertices.iter().enumerate() {
                position[v] = i;
            }
        }
        for (e, &d) in dst.iter().enumerate() {
            let p = &mut planes[group_of[d]];
            p.edges.push(e);
            p.local_dst.push(position[d]);
        }
        Self {
            n_vertices: n,
            src,
            dst,
            planes,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}

/// Scaled inputs of one graph, ready for the network.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub index: GraphIndex,
    pub vertex_inputs: Matrix,
    pub edge_inputs: Matrix,
    pub labels: Option<Vec<f64>>,
}

fn aggregate(tape: &mut Tape, agg: Aggregation, messages: Var, index: &[usize], n_out: usize) -> Result<Var> {
    match agg {
        Aggregation::Mean => tape.scatter_mean(messages, index, n_out),
        Aggregation::Max => tape.scatter_max(messages, index, n_out),
    }
}

/// Encodes raw inputs into vertex and edge states.
pub fn encode(tape: &mut Tape, enc: &EncoderParams, vertex_inputs: Var, edge_inputs: Var) -> Result<(Var, Var)> {
    let h = enc.vertex.apply(tape, vertex_inputs)?;
    let e = enc.edge.apply(tape, edge_inputs)?;
    Ok((tape.silu(h), tape.silu(e)))
}

/// One EdgeConv block: every vertex aggregates `M(h_v, h_w − h_v, e_vw)`
/// over its incoming edges, then `h_w ← U(h_w, m_w)`.
pub fn edgeconv_forward(
    tape: &mut Tape,
    index: &GraphIndex,
    h: Var,
    e: Var,
    params: &BlockParams,
    agg: Aggregation,
) -> Result<Var> {
    let h_src = tape.gather(h, &index.src)?;
    let h_dst = tape.gather(h, &index.dst)?;
    let rel = tape.sub(h_dst, h_src)?;
    let msg = params.message(tape, &[h_src, rel, e])?;
    let m = aggregate(tape, agg, msg, &index.dst, index.n_vertices)?;
    params.update(tape, h, m)
}

/// One EmulsionConv block: planes are visited in increasing depth; the
/// vertices of a plane aggregate `M(h_v, h_w, e_vw)` from the current source
/// states and are updated before the next plane is visited.
pub fn emulsionconv_forward(
    tape: &mut Tape,
    index: &GraphIndex,
    h: Var,
    e: Var,
    params: &BlockParams,
    agg: Aggregation,
) -> Result<Var> {
    let d = tape.shape(h).1;
    let mut h = h;
    for plane in &index.planes {
        let h_here = tape.gather(h, &plane.vertices)?;
        let m = if plane.edges.is_empty() {
            tape.leaf(Matrix::zeros(plane.vertices.len(), d))
        } else {
            let src: Vec<usize> = plane.edges.iter().map(|&k| index.src[k]).collect();
            let h_src = tape.gather(h, &src)?;
            let h_dst = tape.gather(h_here, &plane.local_dst)?;
            let e_in = tape.gather(e, &plane.edges)?;
            let msg = params.message(tape, &[h_src, h_dst, e_in])?;
            aggregate(tape, agg, msg, &plane.local_dst, plane.vertices.len())?
        };
        let updated = params.update(tape, h_here, m)?;
        h = tape.replace_rows(h, &plane.vertices, updated)?;
    }
    Ok(h)
}

/// Per-edge logits from `[h_src, h_dst, e]`, as an E×1 column.
pub fn classifier_forward(tape: &mut Tape, index: &GraphIndex, h: Var, e: Var, head: &HeadParams) -> Result<Var> {
    let h_src = tape.gather(h, &index.src)?;
    let h_dst = tape.gather(h, &index.dst)?;
    let x = tape.concat(&[h_src, h_dst, e])?;
    mlp2(tape, &head.l1, &head.l2, x)
}

/// Full network: encoder, message-passing stack, classifier head.
pub fn forward_logits(tape: &mut Tape, model: &BoundModel, graph: &PreparedGraph) -> Result<Var> {
    let xv = tape.leaf(graph.vertex_inputs.clone());
    let xe = tape.leaf(graph.edge_inputs.clone());
    let (mut h, e) = encode(tape, &model.encoder, xv, xe)?;
    for (kind, block) in &model.blocks {
        h = match kind {
            BlockKind::Edge => edgeconv_forward(tape, &graph.index, h, e, block, model.aggregation)?,
            BlockKind::Emulsion => emulsionconv_forward(tape, &graph.index, h, e, block, model.aggregation)?,
        };
    }
    classifier_forward(tape, &graph.index, h, e, &model.head)
}
