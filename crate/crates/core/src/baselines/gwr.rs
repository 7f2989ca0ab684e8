//! Geographically weighted regression with Gaussian distance weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::Point;
use crate::linalg::solve_spd;

pub const GWR_RIDGE: f64 = 1e-6;

/// Bandwidths scanned by leave-one-out selection, km.
pub fn default_bandwidth_grid() -> Vec<f64> {
    vec![0.25, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0, f64::INFINITY]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gwr {
    pub bandwidth: f64,
    x: DMatrix<f64>,
    y: DVector<f64>,
    locations: Vec<Point>,
}

/// `exp(-d² / (2 bw²))`; an infinite bandwidth weights every point by 1.
#[inline]
pub fn gwr_weight(d: f64, bandwidth: f64) -> f64 {
    if bandwidth.is_infinite() {
        1.0
    } else {
        (-d * d / (2.0 * bandwidth * bandwidth)).exp()
    }
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Weighted least squares at one location; returns the coefficients and the
/// weighted residual variance. `skip` drops one training row (leave-one-out).
fn local_fit(
    x1: &DMatrix<f64>,
    y: &DVector<f64>,
    locations: &[Point],
    at: &Point,
    bandwidth: f64,
    skip: Option<usize>,
) -> Option<(DVector<f64>, f64)> {
    let p = x1.ncols();
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    let mut w = vec![0.0; y.len()];
    for i in 0..y.len() {
        if Some(i) == skip {
            continue;
        }
        w[i] = gwr_weight(at.dist(&locations[i]), bandwidth);
        if w[i] == 0.0 {
            continue;
        }
        let row = x1.row(i);
        xtwx.ger(w[i], &row.transpose(), &row.transpose(), 1.0);
        xtwy.axpy(w[i] * y[i], &row.transpose(), 1.0);
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return None;
    }
    let beta = solve_spd(&xtwx, &xtwy, GWR_RIDGE)?;
    let resid = y - x1 * &beta;
    let rss: f64 = (0..y.len()).map(|i| w[i] * resid[i] * resid[i]).sum();
    Some((beta, rss / sw))
}

impl Gwr {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, locations: &[Point], bandwidth: f64) -> Result<Gwr> {
        if !(bandwidth > 0.0) {
            return Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if x.nrows() != y.len() || y.len() != locations.len() || y.is_empty() {
            return Err(Error::Input("GWR inputs differ in length".into()));
        }
        Ok(Gwr { bandwidth, x: with_intercept(x), y: y.clone(), locations: locations.to_vec() })
    }

    /// Picks the bandwidth with the smallest leave-one-out squared error.
    pub fn fit_auto(x: &DMatrix<f64>, y: &DVector<f64>, locations: &[Point], grid: &[f64]) -> Result<Gwr> {
        let x1 = with_intercept(x);
        let mut best: Option<(f64, f64)> = None;
        for &bw in grid {
            let mut sse = 0.0;
            let mut ok = true;
            for i in 0..y.len() {
                match local_fit(&x1, y, locations, &locations[i], bw, Some(i)) {
                    Some((beta, _)) => sse += (y[i] - x1.row(i).dot(&beta.transpose())).powi(2),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok && best.is_none_or(|(s, _)| sse < s) {
                best = Some((sse, bw));
            }
        }
        let (_, bw) = best.ok_or_else(|| Error::Numerical {
            matrix: "GWR local system".into(),
            detail: "no bandwidth in the grid gave solvable local fits".into(),
        })?;
        Gwr::fit(x, y, locations, bw)
    }

    /// Mean and variance at each query row.
    pub fn predict(&self, x: &DMatrix<f64>, locations: &[Point]) -> Result<(Vec<f64>, Vec<f64>)> {
        let xq = with_intercept(x);
        let mut mean = Vec::with_capacity(locations.len());
        let mut var = Vec::with_capacity(locations.len());
        for (i, at) in locations.iter().enumerate() {
            let (beta, s2) = local_fit(&self.x, &self.y, &self.locations, at, self.bandwidth, None)
                .ok_or_else(|| Error::Numerical {
                    matrix: "GWR local system".into(),
                    detail: format!("singular at ({:.3}, {:.3}) km", at.x, at.y),
                })?;
            mean.push(xq.row(i).dot(&beta.transpose()));
            var.push(s2.max(1e-6));
        }
        Ok((mean, var))
    }
}
