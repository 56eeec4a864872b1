//! Toy electromagnetic cascades.
//!
//! Each particle advances plane by plane, leaves one base-track per plane
//! while its energy is above the recording cutoff and splits into two
//! half-energy daughters with a per-plane probability. Angular deflections
//! follow the Molière distribution
//! `P(Δθ) = 2Δθ/⟨θ²⟩ · exp(−Δθ²/⟨θ²⟩)` with `⟨θ²⟩ = (Es/(βE))²·Δz/X0`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tracks::{self, BaseTrack, Brick, MAX_PLANE, PLANE_PITCH, X_HALF_WIDTH, Y_HALF_WIDTH};
use crate::{Error, Result};

const UM_PER_MM: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_showers: usize,
    /// Primary energy range, MeV.
    pub e_min: f64,
    pub e_max: f64,
    /// Particles below this energy leave no tracks, MeV.
    pub e_cutoff: f64,
    /// Transverse half-widths of the region tracks are recorded in, µm.
    pub x_half_width: f64,
    pub y_half_width: f64,
    pub seed: u64,
    /// Radiation length used by the scattering law, mm.
    pub radiation_length: f64,
    /// Scattering energy constant, MeV.
    pub critical_energy: f64,
    pub beta: f64,
    /// Mean free path between splittings, mm.
    pub split_length: f64,
    /// Daughter opening-angle scale: rms kick is `opening_energy / E_daughter` rad.
    pub opening_energy: f64,
    /// Primary slopes are drawn uniformly in `[-max_slope, max_slope]`.
    pub max_slope: f64,
    /// Fraction of the transverse half-widths used for shower origins.
    pub origin_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_showers: 8,
            e_min: 100.0,
            e_max: 1000.0,
            e_cutoff: 40.0,
            x_half_width: X_HALF_WIDTH,
            y_half_width: Y_HALF_WIDTH,
            seed: 0,
            radiation_length: 5000.0,
            critical_energy: 21.0,
            beta: 1.0,
            split_length: 6.5,
            opening_energy: 5.0,
            max_slope: 0.2,
            origin_fraction: 0.8,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("gen: {msg}")));
        if !(self.e_min > 0.0 && self.e_min <= self.e_max) {
            return bad("need 0 < e_min <= e_max");
        }
        if !(self.e_cutoff > 0.0) {
            return bad("e_cutoff must be positive");
        }
        if !(self.radiation_length > 0.0 && self.critical_energy > 0.0 && self.beta > 0.0) {
            return bad("radiation_length, critical_energy and beta must be positive");
        }
        if !(self.split_length > 0.0 && self.opening_energy >= 0.0 && self.max_slope >= 0.0) {
            return bad("split_length must be positive, opening_energy and max_slope nonnegative");
        }
        if !(0.0..=1.0).contains(&self.origin_fraction) {
            return bad("origin_fraction must lie in [0, 1]");
        }
        if !(self.x_half_width > 0.0
            && self.x_half_width <= X_HALF_WIDTH
            && self.y_half_width > 0.0
            && self.y_half_width <= Y_HALF_WIDTH)
        {
            return bad("transverse bounds must lie inside the brick");
        }
        Ok(())
    }

    /// Mean squared spatial deflection `⟨θ²⟩` after `dz` µm at energy `energy` MeV.
    pub fn mean_sq_angle(&self, energy: f64, dz: f64) -> f64 {
        let theta_s = self.critical_energy / (self.beta * energy);
        theta_s * theta_s * (dz / UM_PER_MM) / self.radiation_length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowerTruth {
    pub shower_id: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub tx: f64,
    pub ty: f64,
    /// Primary energy, MeV.
    pub energy: f64,
    pub track_ids: Vec<i64>,
}

/// Inverse CDF of the Molière angle distribution for a given `⟨θ²⟩`.
pub fn scatter_quantile(mean_sq: f64, u: f64) -> f64 {
    (-mean_sq * (1.0 - u).ln()).sqrt()
}

/// Draws a spatial scattering angle for a particle of energy `energy` MeV
/// crossing `dz` µm.
pub fn sample_scatter<R: Rng + ?Sized>(energy: f64, dz: f64, cfg: &GenConfig, rng: &mut R) -> f64 {
    scatter_quantile(cfg.mean_sq_angle(energy, dz), rng.random::<f64>())
}

fn kick<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> (f64, f64) {
    let psi = rng.random::<f64>() * TAU;
    (theta * psi.cos(), theta * psi.sin())
}

#[derive(Debug, Clone, Copy)]
struct Particle {
    x: f64,
    y: f64,
    tx: f64,
    ty: f64,
    energy: f64,
}

pub fn origin_inside_brick(x: f64, y: f64, z: f64) -> bool {
    x.abs() <= X_HALF_WIDTH && y.abs() <= Y_HALF_WIDTH && (0.0..=tracks::plane_z(MAX_PLANE)).contains(&z)
}

/// Simulates one shower. Track ids are assigned consecutively from
/// `first_track_id`.
#[allow(clippy::too_many_arguments)]
pub fn gen_shower<R: Rng + ?Sized>(
    shower_id: i64,
    energy: f64,
    origin: (f64, f64, f64),
    direction: (f64, f64),
    first_track_id: i64,
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<(Vec<BaseTrack>, ShowerTruth)> {
    let (x0, y0, z0) = origin;
    if !origin_inside_brick(x0, y0, z0) {
        return Err(Error::OriginOutsideBrick { x: x0, y: y0, z: z0 });
    }
    let split_prob = 1.0 - (-(PLANE_PITCH / UM_PER_MM) / cfg.split_length).exp();
    let first_plane = (z0 / PLANE_PITCH - 1e-9).ceil().max(0.0) as usize;
    let lead_in = tracks::plane_z(first_plane) - z0;

    let mut alive = vec![Particle {
        x: x0 + direction.0 * lead_in,
        y: y0 + direction.1 * lead_in,
        tx: direction.0,
        ty: direction.1,
        energy,
    }];
    let mut out = Vec::new();
    let mut next_id = first_track_id;

    for plane in first_plane..=MAX_PLANE {
        let z = tracks::plane_z(plane);
        let mut next = Vec::with_capacity(alive.len() * 2);
        for mut p in alive.drain(..) {
            if p.energy < cfg.e_cutoff || p.x.abs() > cfg.x_half_width || p.y.abs() > cfg.y_half_width {
                continue;
            }
            out.push(BaseTrack::new(next_id, p.x, p.y, z, p.tx, p.ty).with_shower(shower_id));
            next_id += 1;

            p.x += p.tx * PLANE_PITCH;
            p.y += p.ty * PLANE_PITCH;
            let (dtx, dty) = kick(sample_scatter(p.energy, PLANE_PITCH, cfg, rng), rng);
            p.tx += dtx;
            p.ty += dty;

            if rng.random::<f64>() < split_prob {
                let half = p.energy / 2.0;
                let open = if cfg.opening_energy > 0.0 {
                    scatter_quantile((cfg.opening_energy / half).powi(2), rng.random::<f64>())
                } else {
                    0.0
                };
                let (kx, ky) = kick(open, rng);
                for sign in [1.0, -1.0] {
                    next.push(Particle {
                        tx: p.tx + sign * kx,
                        ty: p.ty + sign * ky,
                        energy: half,
                        ..p
                    });
                }
            } else {
                next.push(p);
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }

    let truth = ShowerTruth {
        shower_id,
        x: x0,
        y: y0,
        z: z0,
        tx: direction.0,
        ty: direction.1,
        energy,
        track_ids: out.iter().map(|t| t.track_id).collect(),
    };
    Ok((out, truth))
}

/// Independent random stream for one shower of one brick.
pub fn shower_rng(seed: u64, brick_id: i64, shower_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (brick_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(shower_index);
    rng
}

/// Generates a brick of `cfg.n_showers` showers starting in the upstream half.
pub fn gen_brick(cfg: &GenConfig, brick_id: i64) -> Result<(Brick, Vec<ShowerTruth>)> {
    cfg.validate()?;
    let z_max = tracks::plane_z(MAX_PLANE) / 2.0;
    let mut all = Vec::new();
    let mut truths = Vec::with_capacity(cfg.n_showers);
    for i in 0..cfg.n_showers {
        let mut rng = shower_rng(cfg.seed, brick_id, i as u64);
        let energy = if cfg.e_max > cfg.e_min {
            rng.random_range(cfg.e_min..cfg.e_max)
        } else {
            cfg.e_min
        };
        let mut uniform = |half: f64| (rng.random::<f64>() * 2.0 - 1.0) * half;
        let x = uniform(cfg.x_half_width * cfg.origin_fraction);
        let y = uniform(cfg.y_half_width * cfg.origin_fraction);
        let tx = uniform(cfg.max_slope);
        let ty = uniform(cfg.max_slope);
        let z = rng.random::<f64>() * z_max;
        let (tracks, truth) = gen_shower(i as i64, energy, (x, y, z), (tx, ty), all.len() as i64, cfg, &mut rng)?;
        all.extend(tracks);
        truths.push(truth);
    }
    Ok((Brick::new(brick_id, all)?, truths))
}

pub const TRUTH_CSV_HEADER: &str = "shower_id,x,y,z,tx,ty,E_true";

pub fn write_truth<W: std::io::Write>(truths: &[ShowerTruth], out: &mut W) -> Result<()> {
    writeln!(out, "{TRUTH_CSV_HEADER}")?;
    for t in truths {
        writeln!(out, "{},{},{},{},{},{},{}", t.shower_id, t.x, t.y, t.z, t.tx, t.ty, t.energy)?;
    }
    Ok(())
}

pub fn save_truth(truths: &[ShowerTruth], path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_truth(truths, &mut out)?;
    std::io::Write::flush(&mut out)?;
    Ok(())
}

/// Reads a truth CSV. Track membership is restored from the brick's
/// `shower_id` column.
pub fn load_truth(path: &std::path::Path, brick: &Brick) -> Result<Vec<ShowerTruth>> {
    #[derive(Deserialize)]
    struct Row {
        shower_id: i64,
        x: f64,
        y: f64,
        z: f64,
        tx: f64,
        ty: f64,
        #[serde(rename = "E_true")]
        energy: f64,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut truths = Vec::new();
    for row in reader.deserialize() {
        let r: Row = row?;
        truths.push(ShowerTruth {
            shower_id: r.shower_id,
            x: r.x,
            y: r.y,
            z: r.z,
            tx: r.tx,
            ty: r.ty,
            energy: r.energy,
            track_ids: brick
                .tracks
                .iter()
                .filter(|t| t.shower_id == r.shower_id)
                .map(|t| t.track_id)
                .collect(),
        });
    }
    Ok(truths)
}
