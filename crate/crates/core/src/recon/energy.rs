use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::median;
use crate::{Error, Result};

pub const HUBER_DELTA: f64 = 1.35;
/// Kernel bandwidth of the quantile map, in units of the feature's spread.
pub const QUANTILE_WINDOW: f64 = 0.21;
const MIN_SHOWERS: usize = 10;

/// Box-Cox transform of `x + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCox {
    pub shift: f64,
    pub lambda: f64,
}

pub fn boxcox(x: f64, lambda: f64) -> f64 {
    if lambda.abs() < 1e-12 {
        x.ln()
    } else {
        (x.powf(lambda) - 1.0) / lambda
    }
}

impl BoxCox {
    pub fn apply(&self, x: f64) -> f64 {
        // values below the training range are held at its floor
        boxcox((x + self.shift).max(1e-12), self.lambda)
    }

    pub fn invert(&self, y: f64) -> f64 {
        let x = if self.lambda.abs() < 1e-12 {
            y.exp()
        } else {
            (self.lambda * y + 1.0).powf(1.0 / self.lambda)
        };
        x - self.shift
    }
}

fn boxcox_llf(x: &[f64], lambda: f64) -> f64 {
    let n = x.len() as f64;
    let y: Vec<f64> = x.iter().map(|&v| boxcox(v, lambda)).collect();
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (lambda - 1.0) * x.iter().map(|v| v.ln()).sum::<f64>() - 0.5 * n * var.ln()
}

/// Maximum-likelihood exponent over `[-3, 3]`, after shifting the data to
/// start at 1 when it is not strictly positive.
pub fn fit_boxcox(x: &[f64]) -> BoxCox {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min > 0.0 { 0.0 } else { 1.0 - min };
    let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
    let f = |l: f64| boxcox_llf(&xs, l);
    let grid: Vec<f64> = (0..=120).map(|i| -3.0 + 0.05 * i as f64).collect();
    let best = grid
        .iter()
        .copied()
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .expect("nonempty grid");
    let (mut lo, mut hi) = ((best - 0.05).max(-3.0), (best + 0.05).min(3.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) >= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    BoxCox {
        shift,
        lambda: 0.5 * (lo + hi),
    }
}

/// Smoothed empirical CDF: the mean of Gaussian kernel CDFs centred on the
/// standardized training values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelQuantile {
    pub mean: f64,
    pub std: f64,
    pub bandwidth: f64,
    pub points: Vec<f64>,
}

impl KernelQuantile {
    pub fn fit(values: &[f64], bandwidth: f64) -> Option<Self> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > 1e-12 * (1.0 + mean.abs())) {
            return None;
        }
        let mut points: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();
        points.sort_by(f64::total_cmp);
        Some(Self {
            mean,
            std,
            bandwidth,
            points,
        })
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let z = (v - self.mean) / self.std;
        let h = self.bandwidth * std::f64::consts::SQRT_2;
        self.points.iter().map(|p| 0.5 * (1.0 + libm::erf((z - p) / h))).sum::<f64>() / self.points.len() as f64
    }
}

fn design(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] })
}

fn weighted_lstsq(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let sw = w.map(f64::sqrt);
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let yw = y.component_mul(&sw);
    xw.svd(true, true)
        .solve(&yw, 1e-12)
        .map_err(|e| Error::InsufficientData(format!("least squares failed: {e}")))
}

/// Affine fit `y ≈ b0 + Σ b_j·x_j` under Huber loss with threshold
/// `delta` times the MAD residual scale, by iteratively reweighted least
/// squares. Returns `[b0, b1, ...]`.
pub fn huber_fit(rows: &[Vec<f64>], y: &[f64], delta: f64) -> Result<Vec<f64>> {
    let x = design(rows);
    let yv = DVector::from_column_slice(y);
    let mut w = DVector::from_element(y.len(), 1.0);
    let mut beta = weighted_lstsq(&x, &yv, &w)?;
    let tiny = 1e-12 * (1.0 + yv.amax());
    for _ in 0..200 {
        let r: Vec<f64> = (&yv - &x * &beta).iter().copied().collect();
        let mr = median(&r);
        let scale = median(&r.iter().map(|v| (v - mr).abs()).collect::<Vec<_>>()) / 0.6745;
        if !(scale > tiny) {
            break;
        }
        let cut = delta * scale;
        for (wi, ri) in w.iter_mut().zip(&r) {
            *wi = if ri.abs() <= cut { 1.0 } else { cut / ri.abs() };
        }
        let next = weighted_lstsq(&x, &yv, &w)?;
        let step = (&next - &beta).amax();
        beta = next;
        if step <= 1e-10 * (1.0 + beta.amax()) {
            break;
        }
    }
    Ok(beta.iter().copied().collect())
}

/// Shower energy from two cluster features, the track count and estimated
/// origin depth: each is Box-Cox transformed, mapped to `[0, 1]` by a
/// smoothed CDF, and combined by a Huber-fitted affine model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub boxcox: Vec<BoxCox>,
    pub quantile: Vec<KernelQuantile>,
    pub coef: Vec<f64>,
}

impl EnergyModel {
    pub fn fit(features: &[[f64; 2]], e_true: &[f64]) -> Result<Self> {
        if features.len() != e_true.len() {
            return Err(Error::LabelMismatch(format!(
                "{} feature rows for {} energies",
                features.len(),
                e_true.len()
            )));
        }
        if features.len() < MIN_SHOWERS {
            return Err(Error::InsufficientData(format!(
                "energy fit needs at least {MIN_SHOWERS} showers, got {}",
                features.len()
            )));
        }
        let mut boxcox = Vec::new();
        let mut quantile = Vec::new();
        for j in 0..2 {
            let col: Vec<f64> = features.iter().map(|f| f[j]).collect();
            let bc = fit_boxcox(&col);
            let t: Vec<f64> = col.iter().map(|&v| bc.apply(v)).collect();
            let q = KernelQuantile::fit(&t, QUANTILE_WINDOW).ok_or(Error::DegenerateFeature(j))?;
            boxcox.push(bc);
            quantile.push(q);
        }
        let mut model = Self {
            boxcox,
            quantile,
            coef: Vec::new(),
        };
        let rows: Vec<Vec<f64>> = features.iter().map(|f| model.transform(f)).collect();
        model.coef = huber_fit(&rows, e_true, HUBER_DELTA)?;
        Ok(model)
    }

    pub fn transform(&self, f: &[f64; 2]) -> Vec<f64> {
        (0..2).map(|j| self.quantile[j].cdf(self.boxcox[j].apply(f[j]))).collect()
    }

    pub fn predict(&self, f: &[f64; 2]) -> f64 {
        let t = self.transform(f);
        self.coef[0] + self.coef[1] * t[0] + self.coef[2] * t[1]
    }
}
