//! Bricks and base-tracks.
//!
//! A base-track is the atomic observable of an emulsion brick: a position on
//! one of the emulsion planes plus the two projection slopes. Coordinates are
//! in µm; slopes are tangents of the XZ / YZ projection angles.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, NOISE};

/// Half-width of the brick along X, µm.
pub const X_HALF_WIDTH: f64 = 62_500.0;
/// Half-width of the brick along Y, µm.
pub const Y_HALF_WIDTH: f64 = 49_500.0;
/// Distance between consecutive emulsion planes, µm.
pub const PLANE_PITCH: f64 = 1293.0;
/// Number of emulsion films in a brick.
pub const N_LAYERS: usize = 57;
/// Highest admissible plane index. Planes are `0..=MAX_PLANE`, i.e. 58 positions.
pub const MAX_PLANE: usize = 57;
/// Snapping tolerance for plane membership, µm.
pub const PLANE_TOLERANCE: f64 = 0.5;

pub const TRACK_CSV_HEADER: [&str; 8] = ["brick_id", "track_id", "x", "y", "z", "tx", "ty", "shower_id"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseTrack {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub tx: f64,
    pub ty: f64,
    pub track_id: i64,
    /// Truth shower label, [`NOISE`] when unknown.
    pub shower_id: i64,
}

impl BaseTrack {
    pub fn new(track_id: i64, x: f64, y: f64, z: f64, tx: f64, ty: f64) -> Self {
        Self {
            x,
            y,
            z,
            tx,
            ty,
            track_id,
            shower_id: NOISE,
        }
    }

    pub fn with_shower(mut self, shower_id: i64) -> Self {
        self.shower_id = shower_id;
        self
    }

    pub fn is_labeled(&self) -> bool {
        self.shower_id != NOISE
    }

    /// Position of the straight-line extrapolation at depth `z`.
    pub fn extrapolate(&self, z: f64) -> (f64, f64) {
        let dz = z - self.z;
        (self.x + self.tx * dz, self.y + self.ty * dz)
    }

    fn violation(&self) -> Option<&'static str> {
        if !(self.x.is_finite() && self.y.is_finite() && self.tx.is_finite() && self.ty.is_finite()) {
            return Some("non-finite track parameters");
        }
        if self.x.abs() > X_HALF_WIDTH || self.y.abs() > Y_HALF_WIDTH {
            return Some("track outside transverse brick bounds");
        }
        if layer_index(self.z).is_err() {
            return Some("track off the emulsion planes");
        }
        None
    }

    pub fn within_bounds(&self) -> bool {
        self.violation().is_none()
    }
}

/// Plane index `k` of a depth `z = 1293·k`.
pub fn layer_index(z: f64) -> Result<usize> {
    let k = (z / PLANE_PITCH).round();
    if !z.is_finite() || k < 0.0 || k > MAX_PLANE as f64 || (z - k * PLANE_PITCH).abs() > PLANE_TOLERANCE {
        return Err(Error::OffPlane { z });
    }
    Ok(k as usize)
}

pub fn plane_z(k: usize) -> f64 {
    k as f64 * PLANE_PITCH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Brick {
    pub brick_id: i64,
    pub tracks: Vec<BaseTrack>,
    pub n_layers: usize,
    pub pitch_z: f64,
}

impl Brick {
    /// Builds a brick, rejecting tracks that break the geometry or share an id.
    pub fn new(brick_id: i64, tracks: Vec<BaseTrack>) -> Result<Self> {
        let brick = Self {
            brick_id,
            tracks,
            n_layers: N_LAYERS,
            pitch_z: PLANE_PITCH,
        };
        brick.validate()?;
        Ok(brick)
    }

    pub fn empty(brick_id: i64) -> Self {
        Self {
            brick_id,
            tracks: Vec::new(),
            n_layers: N_LAYERS,
            pitch_z: PLANE_PITCH,
        }
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut reason = None;
        let mut bad = Vec::new();
        for t in &self.tracks {
            if let Some(r) = t.violation() {
                reason.get_or_insert(r);
                bad.push(t.track_id);
            }
        }
        if let Some(reason) = reason {
            return Err(Error::Invariant {
                track_ids: bad,
                reason: reason.to_string(),
            });
        }
        let mut seen = HashSet::with_capacity(self.tracks.len());
        let dups: Vec<i64> = self
            .tracks
            .iter()
            .filter(|t| !seen.insert(t.track_id))
            .map(|t| t.track_id)
            .collect();
        if !dups.is_empty() {
            return Err(Error::Invariant {
                track_ids: dups,
                reason: "duplicate track ids".to_string(),
            });
        }
        Ok(())
    }

    pub fn has_truth(&self) -> bool {
        self.tracks.iter().all(BaseTrack::is_labeled)
    }
}

/// File name used for a brick inside a data directory.
pub fn brick_file_name(brick_id: i64) -> String {
    format!("brick_{brick_id}.csv")
}

fn brick_id_from_path(path: &Path) -> Option<i64> {
    path.file_stem()?.to_str()?.strip_prefix("brick_")?.parse().ok()
}

/// Reads a brick from the track CSV format.
///
/// The `shower_id` column is optional; without it every track is unlabeled.
pub fn load_tracks(path: &Path) -> Result<Brick> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let required = ["brick_id", "track_id", "x", "y", "z", "tx", "ty"];
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = column(name).ok_or_else(|| parse_err(1, format!("missing column `{name}`")))?;
    }
    let shower_col = column("shower_id");
    for h in headers.iter() {
        if !TRACK_CSV_HEADER.contains(&h) {
            return Err(parse_err(1, format!("unknown column `{h}`")));
        }
    }

    let mut brick_id = brick_id_from_path(path);
    let mut tracks = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let int = |i: usize| -> Result<i64> {
            field(i)
                .parse::<i64>()
                .map_err(|e| parse_err(line, format!("column `{}`: {e}", &headers[i])))
        };
        let real = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column `{}`: {e}", &headers[i])))
        };
        let row_brick = int(idx[0])?;
        match brick_id {
            None => brick_id = Some(row_brick),
            Some(b) if b != row_brick => {
                return Err(parse_err(line, format!("brick_id {row_brick} differs from {b}")));
            }
            _ => {}
        }
        let shower_id = match shower_col {
            Some(c) if !field(c).is_empty() => int(c)?,
            _ => NOISE,
        };
        tracks.push(BaseTrack {
            track_id: int(idx[1])?,
            x: real(idx[2])?,
            y: real(idx[3])?,
            z: real(idx[4])?,
            tx: real(idx[5])?,
            ty: real(idx[6])?,
            shower_id,
        });
    }
    Brick::new(brick_id.unwrap_or(0), tracks)
}

pub fn save_tracks(brick: &Brick, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_tracks(brick, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Writes the CSV form of a brick. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_tracks<W: Write>(brick: &Brick, out: &mut W) -> Result<()> {
    writeln!(out, "{}", TRACK_CSV_HEADER.join(","))?;
    for t in &brick.tracks {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            brick.brick_id, t.track_id, t.x, t.y, t.z, t.tx, t.ty, t.shower_id
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T = Brick> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub val: Vec<T>,
    pub seed: u64,
}

/// Seeded shuffle followed by a 34/33/33 train/test/validation partition.
pub fn split_dataset<T>(items: Vec<T>, seed: u64) -> Result<DatasetSplit<T>> {
    let n = items.len();
    if n < 3 {
        return Err(Error::TooFewBricks { needed: 3, got: n });
    }
    let mut items = items;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = ((n as f64 * 0.34).round() as usize).clamp(1, n - 2);
    let n_test = ((n as f64 * 0.33).round() as usize).clamp(1, n - n_train - 1);
    let val = items.split_off(n_train + n_test);
    let test = items.split_off(n_train);
    Ok(DatasetSplit {
        train: items,
        test,
        val,
        seed,
    })
}
