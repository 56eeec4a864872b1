//! JSON-lines graph files: one record per vertex, then one per edge.
//!
//! ```text
//! {"v":12,"f":[...10 floats...]}
//! {"e":[12,40],"f":[...6 floats...],"y":1,"p":0.93}
//! ```
//!
//! Vertices carry the track id; edges reference track ids. A clustered graph
//! adds `"c"` to every vertex record.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeFeatures, TrackGraph, VertexFeatures};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexRecord {
    v: i64,
    f: [f64; 10],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<i64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    e: [i64; 2],
    f: [f64; 6],
    y: Option<u8>,
    p: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Record {
    Vertex(VertexRecord),
    Edge(EdgeRecord),
}

pub fn write_graph<W: Write>(g: &TrackGraph, out: &mut W) -> Result<()> {
    for (i, (t, f)) in g.tracks.iter().zip(&g.vertex_features).enumerate() {
        let rec = VertexRecord {
            v: t.track_id,
            f: f.0,
            c: g.clusters.as_ref().map(|c| c[i]),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    for e in &g.edges {
        let rec = EdgeRecord {
            e: [g.tracks[e.src].track_id, g.tracks[e.dst].track_id],
            f: e.features.0,
            y: e.label,
            p: e.prob,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_graph(g: &TrackGraph, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_graph(g, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Reads a graph file. Tracks are rebuilt from the first five vertex
/// features and carry no truth label.
pub fn read_graph<R: BufRead>(input: R, path: &Path) -> Result<TrackGraph> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        msg,
    };
    let mut g = TrackGraph::default();
    let mut clusters = Vec::new();
    let mut index: HashMap<i64, usize> = HashMap::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| err(lineno, e.to_string()))?;
        match rec {
            Record::Vertex(v) => {
                if !g.edges.is_empty() {
                    return Err(err(lineno, "vertex record after edge records".into()));
                }
                if index.insert(v.v, g.tracks.len()).is_some() {
                    return Err(err(lineno, format!("duplicate vertex {}", v.v)));
                }
                let f = VertexFeatures(v.f);
                g.tracks.push(f.track(v.v));
                g.vertex_features.push(f);
                clusters.push(v.c);
            }
            Record::Edge(e) => {
                let lookup = |id: i64| {
                    index
                        .get(&id)
                        .copied()
                        .ok_or_else(|| err(lineno, format!("unknown vertex {id}")))
                };
                g.edges.push(Edge {
                    src: lookup(e.e[0])?,
                    dst: lookup(e.e[1])?,
                    features: EdgeFeatures(e.f),
                    label: e.y,
                    prob: e.p,
                });
            }
        }
    }
    g.clusters = match clusters.iter().filter(|c| c.is_some()).count() {
        0 => None,
        n if n == clusters.len() => Some(clusters.into_iter().flatten().collect()),
        _ => return Err(err(0, "cluster labels present on only some vertices".into())),
    };
    Ok(g)
}

pub fn load_graph(path: &Path) -> Result<TrackGraph> {
    read_graph(BufReader::new(File::open(path)?), path)
}
