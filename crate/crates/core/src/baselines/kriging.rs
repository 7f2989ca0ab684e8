//! Zero-mean Matérn 3/2 kriging of residuals, with parameters fitted by
//! maximizing the exact marginal likelihood, and the regression-kriging
//! baseline built on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{pairwise_distances, Point};
use crate::kernels::MaternKernel;
use crate::linalg::{chol_solve, chol_solve_vec, cholesky_jittered, log_det_chol, solve_lower, solve_spd};
use crate::optim::{softplus, softplus_inv, sigmoid, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingParams {
    pub matern: MaternKernel,
    pub nugget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingFit {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for KrigingFit {
    fn default() -> Self {
        KrigingFit { iterations: 300, learning_rate: 0.05 }
    }
}

/// GP conditioned on residuals at the training locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kriging {
    pub params: KrigingParams,
    locations: Vec<Point>,
    /// (K + nugget I)⁻¹ r
    weights: DVector<f64>,
    chol: DMatrix<f64>,
}

/// Exact log marginal likelihood of `r` and its gradient with respect to
/// (variance, lengthscale, nugget).
pub fn log_marginal(dist: &DMatrix<f64>, r: &DVector<f64>, p: &KrigingParams) -> Result<(f64, [f64; 3])> {
    let n = r.len();
    let mut k = dist.map(|d| p.matern.value(d));
    for i in 0..n {
        k[(i, i)] += p.nugget;
    }
    let (l, _) = cholesky_jittered(&k, 0.0, "kriging covariance")?;
    let alpha = chol_solve_vec(&l, r);
    let lml = -0.5 * r.dot(&alpha) - 0.5 * log_det_chol(&l) - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    // dL/dK = ½ (α αᵀ - K⁻¹)
    let kinv = chol_solve(&l, &DMatrix::identity(n, n));
    let mut g = [0.0; 3];
    for j in 0..n {
        for i in 0..n {
            let w = 0.5 * (alpha[i] * alpha[j] - kinv[(i, j)]);
            let (dv, dl) = p.matern.grads(dist[(i, j)]);
            g[0] += w * dv;
            g[1] += w * dl;
            if i == j {
                g[2] += w;
            }
        }
    }
    Ok((lml, g))
}

impl Kriging {
    /// Conditions the GP with fixed parameters.
    pub fn with_params(locations: &[Point], r: &DVector<f64>, params: KrigingParams) -> Result<Kriging> {
        if locations.len() != r.len() || r.is_empty() {
            return Err(Error::Input("kriging inputs differ in length".into()));
        }
        let mut k = pairwise_distances(locations, locations).map(|d| params.matern.value(d));
        for i in 0..r.len() {
            k[(i, i)] += params.nugget;
        }
        let (chol, _) = cholesky_jittered(&k, 0.0, "kriging covariance")?;
        let weights = chol_solve_vec(&chol, r);
        Ok(Kriging { params, locations: locations.to_vec(), weights, chol })
    }

    /// Maximizes the marginal likelihood of `r` with Adam over softplus
    /// parameters, starting from the residual variance split evenly between
    /// signal and nugget.
    pub fn fit(locations: &[Point], r: &DVector<f64>, cfg: &KrigingFit) -> Result<Kriging> {
        let params = fit_params(locations, r, cfg)?;
        Kriging::with_params(locations, r, params)
    }

    pub fn predict(&self, locations: &[Point]) -> (Vec<f64>, Vec<f64>) {
        let ks = pairwise_distances(&self.locations, locations).map(|d| self.params.matern.value(d));
        let mean = ks.transpose() * &self.weights;
        let v = solve_lower(&self.chol, &ks);
        let var = (0..locations.len())
            .map(|j| (self.params.matern.variance - v.column(j).norm_squared()).max(0.0) + self.params.nugget)
            .collect();
        (mean.as_slice().to_vec(), var)
    }
}

pub fn fit_params(locations: &[Point], r: &DVector<f64>, cfg: &KrigingFit) -> Result<KrigingParams> {
    if locations.len() != r.len() || r.len() < 2 {
        return Err(Error::Input("kriging needs at least two residuals".into()));
    }
    let dist = pairwise_distances(locations, locations);
    let rv = (r.norm_squared() / r.len() as f64).max(1e-6);
    let mut raw = [softplus_inv(rv / 2.0), softplus_inv(1.0), softplus_inv(rv / 2.0)];
    let decode = |raw: &[f64; 3]| KrigingParams {
        matern: MaternKernel { variance: softplus(raw[0]), lengthscale: softplus(raw[1]) },
        nugget: softplus(raw[2]).max(1e-8),
    };
    let mut adam = Adam::new(3);
    for _ in 0..cfg.iterations {
        let p = decode(&raw);
        let (_, g) = log_marginal(&dist, r, &p)?;
        let gr: Vec<f64> = (0..3).map(|i| g[i] * sigmoid(raw[i])).collect();
        if gr.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                matrix: "kriging covariance".into(),
                detail: "non-finite marginal-likelihood gradient".into(),
            });
        }
        adam.ascend(&mut raw, &gr, cfg.learning_rate, None);
    }
    Ok(decode(&raw))
}

/// Ordinary least squares with intercept; returns coefficients (intercept
/// first).
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let x1 = x.clone().insert_column(0, 1.0);
    let xtx = x1.transpose() * &x1;
    let xty = x1.transpose() * y;
    solve_spd(&xtx, &xty, 1e-10).ok_or_else(|| Error::Numerical {
        matrix: "OLS normal equations".into(),
        detail: "not positive definite".into(),
    })
}

pub fn ols_predict(beta: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    x.clone().insert_column(0, 1.0) * beta
}

/// OLS trend plus kriged residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearKriging {
    pub beta: DVector<f64>,
    pub kriging: Kriging,
}

impl LinearKriging {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, locations: &[Point], cfg: &KrigingFit) -> Result<Self> {
        let beta = ols(x, y)?;
        let r = y - ols_predict(&beta, x);
        Ok(LinearKriging { kriging: Kriging::fit(locations, &r, cfg)?, beta })
    }

    /// Refit of the trend with kriging parameters held at `params`.
    pub fn fit_with(x: &DMatrix<f64>, y: &DVector<f64>, locations: &[Point], params: KrigingParams) -> Result<Self> {
        let beta = ols(x, y)?;
        let r = y - ols_predict(&beta, x);
        Ok(LinearKriging { kriging: Kriging::with_params(locations, &r, params)?, beta })
    }

    pub fn predict(&self, x: &DMatrix<f64>, locations: &[Point]) -> (Vec<f64>, Vec<f64>) {
        let trend = ols_predict(&self.beta, x);
        let (m, v) = self.kriging.predict(locations);
        (trend.iter().zip(&m).map(|(a, b)| a + b).collect(), v)
    }
}
