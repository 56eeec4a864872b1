//! Pairwise and per-track features.

use serde::{Deserialize, Serialize};

use crate::tracks::BaseTrack;
use crate::{Error, Result};

/// Denominator floor for the singular vertex and IP features.
pub const EPS: f64 = 1e-6;

const UM_PER_MM: f64 = 1000.0;
const ENERGY_GRID_MIN: f64 = 1.0;
const ENERGY_GRID_MAX: f64 = 1e5;
const ENERGY_GRID_POINTS: usize = 256;

fn guard(v: f64) -> f64 {
    if v.abs() >= EPS {
        v
    } else if v < 0.0 {
        -EPS
    } else {
        EPS
    }
}

/// ∫ |f(z)| dz over an interval of length `len` for a linear `f` taking
/// `f0` and `f1` at the ends.
fn abs_linear_integral(f0: f64, f1: f64, len: f64) -> f64 {
    if f0 * f1 >= 0.0 {
        0.5 * (f0 + f1).abs() * len
    } else {
        // crosses zero inside: two triangles
        0.5 * len * (f0 * f0 + f1 * f1) / (f0.abs() + f1.abs())
    }
}

/// Area between the straight-line extrapolations of two tracks, summed over
/// the XZ and YZ projections, between the two track depths. µm².
pub fn int_dist(a: &BaseTrack, b: &BaseTrack) -> f64 {
    let (lo, hi) = if a.z <= b.z { (a.z, b.z) } else { (b.z, a.z) };
    let len = hi - lo;
    if len == 0.0 {
        return 0.0;
    }
    let (ax0, ay0) = a.extrapolate(lo);
    let (bx0, by0) = b.extrapolate(lo);
    let (ax1, ay1) = a.extrapolate(hi);
    let (bx1, by1) = b.extrapolate(hi);
    abs_linear_integral(bx0 - ax0, bx1 - ax1, len) + abs_linear_integral(by0 - ay0, by1 - ay1, len)
}

/// Impact-parameter projections `(IP_x, IP_y)` of a track pair, with track
/// 1 = `a` and track 2 = `b`. The X formula is
/// `(x1 − x2 − (y1 − y2)·z2) / (y1 − y2)`; Y is its mirror.
pub fn ip_projections(a: &BaseTrack, b: &BaseTrack) -> (f64, f64) {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let ip_x = (dx - dy * b.z) / guard(dy);
    let ip_y = (dy - dx * b.z) / guard(dx);
    (ip_x, ip_y)
}

/// Constants of the multiple-scattering law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Moliere {
    /// MeV.
    pub critical_energy: f64,
    /// mm.
    pub radiation_length: f64,
    pub beta: f64,
}

impl Default for Moliere {
    fn default() -> Self {
        Self {
            critical_energy: 21.0,
            radiation_length: 5000.0,
            beta: 1.0,
        }
    }
}

impl Moliere {
    /// `⟨θ²⟩ = (Es/(βE))²·Δz/X0` with `dz` in µm.
    pub fn mean_sq_angle(&self, energy: f64, dz: f64) -> f64 {
        let theta_s = self.critical_energy / (self.beta * energy);
        theta_s * theta_s * (dz / UM_PER_MM) / self.radiation_length
    }
}

/// Kinematic differences between two tracks, first track upstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDeltas {
    /// µm, positive.
    pub dz: f64,
    pub dtx: f64,
    pub dty: f64,
    /// Residuals of the downstream position w.r.t. the straight extrapolation, µm.
    pub dx: f64,
    pub dy: f64,
}

impl PairDeltas {
    pub fn new(a: &BaseTrack, b: &BaseTrack) -> Result<Self> {
        let (up, down) = if a.z <= b.z { (a, b) } else { (b, a) };
        let dz = down.z - up.z;
        if dz <= 0.0 {
            return Err(Error::SamePlane {
                a: a.track_id,
                b: b.track_id,
            });
        }
        let (ex, ey) = up.extrapolate(down.z);
        Ok(Self {
            dz,
            dtx: down.tx - up.tx,
            dty: down.ty - up.ty,
            dx: down.x - ex,
            dy: down.y - ey,
        })
    }

    pub fn dtheta(&self) -> f64 {
        self.dtx.hypot(self.dty)
    }
}

fn log_normal(v: f64, var: f64) -> f64 {
    -0.5 * (std::f64::consts::TAU * var).ln() - 0.5 * v * v / var
}

/// Pair log-likelihood as a function of the energy hypothesis.
#[derive(Debug, Clone, Copy)]
pub struct PairLikelihood {
    pub deltas: PairDeltas,
    pub consts: Moliere,
    /// Include the Gaussian angle-projection and displacement terms.
    pub gaussian_terms: bool,
}

impl PairLikelihood {
    pub fn log_likelihood(&self, energy: f64) -> f64 {
        let d = &self.deltas;
        let s = self.consts.mean_sq_angle(energy, d.dz);
        let dtheta = d.dtheta();
        let mut ll = (2.0 * dtheta.max(1e-300)).ln() - s.ln() - dtheta * dtheta / s;
        if self.gaussian_terms {
            let angle_var = 0.5 * s;
            let disp_var = s * d.dz * d.dz / 3.0;
            ll += log_normal(d.dtx, angle_var)
                + log_normal(d.dty, angle_var)
                + log_normal(d.dx, disp_var)
                + log_normal(d.dy, disp_var);
        }
        ll
    }

    /// Grid search over `[1, 1e5]` MeV followed by golden-section refinement
    /// in log-energy. Returns `(E, logL)`.
    pub fn maximize(&self) -> (f64, f64) {
        let (lmin, lmax) = (ENERGY_GRID_MIN.ln(), ENERGY_GRID_MAX.ln());
        let step = (lmax - lmin) / (ENERGY_GRID_POINTS - 1) as f64;
        let f = |le: f64| self.log_likelihood(le.exp());
        let mut best = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for i in 0..ENERGY_GRID_POINTS {
            let ll = f(lmin + step * i as f64);
            if ll > best_ll {
                best_ll = ll;
                best = i;
            }
        }
        let lo = lmin + step * best.saturating_sub(1) as f64;
        let hi = lmin + step * (best + 1).min(ENERGY_GRID_POINTS - 1) as f64;
        let (le, ll) = golden_max(f, lo, hi, 1e-10);
        if ll >= best_ll {
            (le.exp(), ll)
        } else {
            let le = lmin + step * best as f64;
            (le.exp(), best_ll)
        }
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Most likely energy of the particle linking two tracks, and the maximized
/// log-likelihood.
pub fn pair_energy_likeliness(a: &BaseTrack, b: &BaseTrack, consts: &Moliere, gaussian_terms: bool) -> Result<(f64, f64)> {
    let deltas = PairDeltas::new(a, b)?;
    Ok(PairLikelihood {
        deltas,
        consts: *consts,
        gaussian_terms,
    }
    .maximize())
}

/// Ten per-track features: raw parameters followed by the azimuthal set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexFeatures(pub [f64; 10]);

impl VertexFeatures {
    pub const DIM: usize = 10;

    pub fn of(t: &BaseTrack) -> Self {
        let phi = t.y.atan2(t.x);
        let z = guard(t.z);
        let r = t.x.hypot(t.y);
        Self([
            t.x,
            t.y,
            t.z,
            t.tx,
            t.ty,
            phi,
            r / z,
            t.x / z,
            t.y / z,
            (phi.sin() + phi.cos()) / guard(phi),
        ])
    }

    /// The track parameters `(x, y, z, tx, ty)` stored in the first five slots.
    pub fn track(&self, track_id: i64) -> BaseTrack {
        let f = &self.0;
        BaseTrack::new(track_id, f[0], f[1], f[2], f[3], f[4])
    }
}

pub fn vertex_features(t: &BaseTrack) -> VertexFeatures {
    VertexFeatures::of(t)
}

/// `[IntDist, IP_x, IP_y, E_pair, logL, Δθ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatures(pub [f64; 6]);

impl EdgeFeatures {
    pub const DIM: usize = 6;

    pub fn int_dist(&self) -> f64 {
        self.0[0]
    }
}
