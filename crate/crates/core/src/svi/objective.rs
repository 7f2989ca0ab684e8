//! Closed-form ELBO of the additive model and its exact gradient.
//!
//! Every latent process p (the Matérn heterogeneity surface, then one process
//! per POI type) shares the inducing locations Z. The variational posterior
//! is stored in whitened coordinates: `u_p = chol(K_uu) w_p` with
//! `q(w_p) = N(m_p, L_p L_p^T)`. With `B_p = chol(K_uu)^{-1} K_uf` the
//! marginals at the training stations are
//!
//! ```text
//! mean_p = B_p^T m_p
//! var_p  = diag(K_ff) - colsq(B_p) + colsq(L_p^T B_p)
//! KL_p   = 0.5 (‖L_p‖² + ‖m_p‖² - M - log det L_p L_p^T)
//! ```
//!
//! and the Gaussian likelihood gives the expected log-likelihood in closed
//! form. Gradients are propagated by hand through the triangular solves and
//! the Cholesky factorization of each `K_uu`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geodata::{pairwise_distances, Point};
use crate::kernels::{KernelFamily, MaternKernel, PointKernel};
use crate::linalg::{cholesky_backward, cholesky_jittered, solve_lower, solve_lower_t};
use crate::mlp::Mlp;
use crate::optim::{sigmoid, softplus, softplus_inv};

use super::{Hyperparameters, PoiKernelParams, ProcessState, VariationalState};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standardized training inputs bound to a model.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub locations: Vec<Point>,
    /// N x K, z-scored.
    pub covariates: DMatrix<f64>,
    /// Standardized target.
    pub y: DVector<f64>,
    /// POI locations for each type in scope.
    pub poi_locations: Vec<Vec<Point>>,
}

impl TrainingData {
    pub fn n(&self) -> usize {
        self.locations.len()
    }
}

/// Position of every unconstrained parameter in the flat optimizer vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_charger: usize,
    pub m: usize,
    pub n_types: usize,
}

impl Layout {
    pub fn charger(&self) -> Range<usize> {
        0..self.n_charger
    }
    pub fn noise(&self) -> usize {
        self.n_charger
    }
    pub fn matern_variance(&self) -> usize {
        self.n_charger + 1
    }
    pub fn matern_lengthscale(&self) -> usize {
        self.n_charger + 2
    }
    pub fn theta(&self, t: usize) -> usize {
        self.n_charger + 3 + 2 * t
    }
    pub fn alpha_variance(&self, t: usize) -> usize {
        self.n_charger + 4 + 2 * t
    }
    fn hyper_len(&self) -> usize {
        self.n_charger + 3 + 2 * self.n_types
    }
    pub fn n_processes(&self) -> usize {
        self.n_types + 1
    }
    fn tri(&self) -> usize {
        self.m * (self.m + 1) / 2
    }
    pub fn q_mean(&self, p: usize) -> Range<usize> {
        let start = self.hyper_len() + p * (self.m + self.tri());
        start..start + self.m
    }
    pub fn q_factor(&self, p: usize) -> Range<usize> {
        let start = self.q_mean(p).end;
        start..start + self.tri()
    }
    pub fn len(&self) -> usize {
        self.hyper_len() + self.n_processes() * (self.m + self.tri())
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// true for entries that belong to the variational distribution.
    pub fn variational_mask(&self) -> Vec<bool> {
        let h = self.hyper_len();
        (0..self.len()).map(|i| i >= h).collect()
    }

    /// Named parameter blocks, used for gradient diagnostics.
    pub fn blocks(&self, process_names: &[String]) -> Vec<(String, Range<usize>)> {
        let mut b = vec![
            ("charger".to_string(), self.charger()),
            ("noise".to_string(), self.noise()..self.noise() + 1),
            ("matern".to_string(), self.matern_variance()..self.matern_lengthscale() + 1),
        ];
        for t in 0..self.n_types {
            b.push((format!("poi[{}]", process_names[t + 1]), self.theta(t)..self.alpha_variance(t) + 1));
        }
        for (p, name) in process_names.iter().enumerate() {
            b.push((format!("q[{name}]"), self.q_mean(p).start..self.q_factor(p).end));
        }
        b
    }

    pub fn encode(&self, hyper: &Hyperparameters, state: &VariationalState) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[self.charger()].copy_from_slice(&hyper.charger_params);
        v[self.noise()] = softplus_inv(hyper.noise_sd);
        v[self.matern_variance()] = softplus_inv(hyper.matern.variance);
        v[self.matern_lengthscale()] = softplus_inv(hyper.matern.lengthscale);
        for (t, k) in hyper.poi.iter().enumerate() {
            v[self.theta(t)] = softplus_inv(k.theta);
            v[self.alpha_variance(t)] = softplus_inv(k.alpha_variance);
        }
        for (p, s) in state.processes.iter().enumerate() {
            v[self.q_mean(p)].copy_from_slice(s.mean.as_slice());
            pack_factor(&s.factor, &mut v[self.q_factor(p)]);
        }
        v
    }

    pub fn decode(&self, params: &[f64]) -> (Hyperparameters, VariationalState) {
        let hyper = Hyperparameters {
            charger_params: params[self.charger()].to_vec(),
            noise_sd: softplus(params[self.noise()]),
            matern: MaternKernel {
                variance: softplus(params[self.matern_variance()]),
                lengthscale: softplus(params[self.matern_lengthscale()]),
            },
            poi: (0..self.n_types)
                .map(|t| PoiKernelParams {
                    theta: softplus(params[self.theta(t)]),
                    alpha_variance: softplus(params[self.alpha_variance(t)]),
                })
                .collect(),
        };
        let processes = (0..self.n_processes())
            .map(|p| ProcessState {
                mean: DVector::from_column_slice(&params[self.q_mean(p)]),
                factor: unpack_factor(&params[self.q_factor(p)], self.m),
            })
            .collect();
        (hyper, VariationalState { processes })
    }
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

fn pack_factor(l: &DMatrix<f64>, out: &mut [f64]) {
    let m = l.nrows();
    for i in 0..m {
        for j in 0..i {
            out[tri_index(i, j)] = l[(i, j)];
        }
        out[tri_index(i, i)] = softplus_inv(l[(i, i)]);
    }
}

fn unpack_factor(raw: &[f64], m: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..i {
            l[(i, j)] = raw[tri_index(i, j)];
        }
        l[(i, i)] = softplus(raw[tri_index(i, i)]);
    }
    l
}

/// Value of the bound and its pieces.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub elbo: f64,
    pub expected_loglik: f64,
    /// KL(q(u_p) ‖ p(u_p)) per process.
    pub kl: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

struct ProcessForward {
    lk: DMatrix<f64>,
    b: DMatrix<f64>,
    lw: DMatrix<f64>,
    mw: DVector<f64>,
    lwt_b: DMatrix<f64>,
    kuu: DMatrix<f64>,
    kuf: DMatrix<f64>,
    kff: DVector<f64>,
    phi: Option<(DMatrix<f64>, DMatrix<f64>)>,
    mu: DVector<f64>,
    var: DVector<f64>,
    kl: f64,
}

/// The ELBO bound to a training set and an inducing set.
pub struct Objective<'a> {
    data: &'a TrainingData,
    net: Mlp,
    family: KernelFamily,
    jitter: f64,
    layout: Layout,
    d_zz: DMatrix<f64>,
    d_zx: DMatrix<f64>,
    d_zp: Vec<DMatrix<f64>>,
    d_xp: Vec<DMatrix<f64>>,
}

impl<'a> Objective<'a> {
    pub fn new(
        data: &'a TrainingData,
        inducing: &[Point],
        net: Mlp,
        family: KernelFamily,
        jitter: f64,
    ) -> Result<Self> {
        if inducing.is_empty() {
            return Err(Error::Parameter("at least one inducing point is required".into()));
        }
        if net.inputs() != data.covariates.ncols() {
            return Err(Error::Parameter(format!(
                "charger function expects {} covariates, data has {}",
                net.inputs(),
                data.covariates.ncols()
            )));
        }
        let layout = Layout {
            n_charger: net.n_params(),
            m: inducing.len(),
            n_types: data.poi_locations.len(),
        };
        Ok(Objective {
            d_zz: pairwise_distances(inducing, inducing),
            d_zx: pairwise_distances(inducing, &data.locations),
            d_zp: data.poi_locations.iter().map(|p| pairwise_distances(inducing, p)).collect(),
            d_xp: data.poi_locations.iter().map(|p| pairwise_distances(&data.locations, p)).collect(),
            data,
            net,
            family,
            jitter,
            layout,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    fn process_name(p: usize) -> String {
        if p == 0 {
            "h0".into()
        } else {
            format!("poi type #{}", p - 1)
        }
    }

    fn forward_process(&self, params: &[f64], p: usize) -> Result<ProcessForward> {
        let lay = &self.layout;
        let n = self.data.n();
        let (kuu, kuf, kff, phi) = if p == 0 {
            let k = MaternKernel {
                variance: softplus(params[lay.matern_variance()]),
                lengthscale: softplus(params[lay.matern_lengthscale()]),
            };
            (
                self.d_zz.map(|d| k.value(d)),
                self.d_zx.map(|d| k.value(d)),
                DVector::from_element(n, k.variance),
                None,
            )
        } else {
            let t = p - 1;
            let k = PointKernel {
                family: self.family,
                theta: softplus(params[lay.theta(t)]),
            };
            let a = softplus(params[lay.alpha_variance(t)]);
            let phi_z = self.d_zp[t].map(|d| k.value(d));
            let phi_x = self.d_xp[t].map(|d| k.value(d));
            let kuu = &phi_z * phi_z.transpose() * a;
            let kuf = &phi_z * phi_x.transpose() * a;
            let kff = DVector::from_iterator(n, phi_x.row_iter().map(|r| a * r.norm_squared()));
            (kuu, kuf, kff, Some((phi_z, phi_x)))
        };
        let (lk, _) = cholesky_jittered(&kuu, self.jitter, &format!("K_uu[{}]", Self::process_name(p)))?;
        let b = solve_lower(&lk, &kuf);
        let mw = DVector::from_column_slice(&params[lay.q_mean(p)]);
        let lw = unpack_factor(&params[lay.q_factor(p)], lay.m);
        let lwt_b = lw.transpose() * &b;
        let mu = b.transpose() * &mw;
        let var = DVector::from_fn(n, |i, _| {
            kff[i] - b.column(i).norm_squared() + lwt_b.column(i).norm_squared()
        });
        let log_det = 2.0 * (0..lay.m).map(|i| lw[(i, i)].ln()).sum::<f64>();
        let kl = 0.5 * (lw.norm_squared() + mw.norm_squared() - lay.m as f64 - log_det);
        Ok(ProcessForward { lk, b, lw, mw, lwt_b, kuu, kuf, kff, phi, mu, var, kl })
    }

    /// Charger-function output g(x_i) at every training station.
    pub fn charger_output(&self, params: &[f64]) -> DVector<f64> {
        self.net.forward(&params[self.layout.charger()], &self.data.covariates)
    }

    pub fn evaluate(&self, params: &[f64], with_grad: bool) -> Result<Evaluation> {
        let lay = &self.layout;
        assert_eq!(params.len(), lay.len(), "parameter vector length");
        let n = self.data.n() as f64;
        let procs = (0..lay.n_processes())
            .map(|p| self.forward_process(params, p))
            .collect::<Result<Vec<_>>>()?;

        let mut mu = self.charger_output(params);
        let mut var = DVector::zeros(self.data.n());
        for f in &procs {
            mu += &f.mu;
            var += &f.var;
        }
        let sigma = softplus(params[lay.noise()]);
        let s = sigma * sigma;
        let r = &self.data.y - &mu;
        let sq = r.norm_squared();
        let sum_var = var.sum();
        let expected_loglik = -0.5 * n * (LN_2PI + s.ln()) - (sq + sum_var) / (2.0 * s);
        let kl: Vec<f64> = procs.iter().map(|f| f.kl).collect();
        let elbo = expected_loglik - kl.iter().sum::<f64>();

        let grad = with_grad.then(|| self.backward(params, &procs, &r, s, sq + sum_var));
        Ok(Evaluation { elbo, expected_loglik, kl, grad })
    }

    fn backward(&self, params: &[f64], procs: &[ProcessForward], r: &DVector<f64>, s: f64, sq_plus_var: f64) -> Vec<f64> {
        let lay = &self.layout;
        let n = self.data.n() as f64;
        let mut g = vec![0.0; lay.len()];
        let r_s = r / s;

        let gc = self.net.backward(&params[lay.charger()], &self.data.covariates, &r_s);
        g[lay.charger()].copy_from_slice(&gc);

        let raw = params[lay.noise()];
        let sigma = softplus(raw);
        let ds = -0.5 * n / s + sq_plus_var / (2.0 * s * s);
        g[lay.noise()] = ds * 2.0 * sigma * sigmoid(raw);

        let kff_bar = -0.5 / s;
        for (p, f) in procs.iter().enumerate() {
            // variational mean
            let gm = &f.b * &r_s - &f.mw;
            g[lay.q_mean(p)].copy_from_slice(gm.as_slice());

            // variational factor: data term then KL
            let mut lw_bar = -(&f.b * f.lwt_b.transpose()) / s;
            lw_bar -= &f.lw;
            let qf = lay.q_factor(p);
            for i in 0..lay.m {
                lw_bar[(i, i)] += 1.0 / f.lw[(i, i)];
                for j in 0..i {
                    g[qf.start + tri_index(i, j)] = lw_bar[(i, j)];
                }
                let raw_d = params[qf.start + tri_index(i, i)];
                g[qf.start + tri_index(i, i)] = lw_bar[(i, i)] * sigmoid(raw_d);
            }

            // back through B = L_k^{-1} K_uf
            let sw_b = &f.lw * &f.lwt_b;
            let b_bar = &f.mw * r_s.transpose() - (sw_b - &f.b) / s;
            let kuf_bar = solve_lower_t(&f.lk, &b_bar);
            let lk_bar = -(&kuf_bar * f.b.transpose());
            let kuu_bar = cholesky_backward(&f.lk, &lk_bar);

            if p == 0 {
                let k = MaternKernel {
                    variance: softplus(params[lay.matern_variance()]),
                    lengthscale: softplus(params[lay.matern_lengthscale()]),
                };
                let (mut gv, mut gl) = (0.0, 0.0);
                for (kb, &d) in kuu_bar.iter().zip(self.d_zz.iter()) {
                    let (a, b) = k.grads(d);
                    gv += kb * a;
                    gl += kb * b;
                }
                for (kb, &d) in kuf_bar.iter().zip(self.d_zx.iter()) {
                    let (a, b) = k.grads(d);
                    gv += kb * a;
                    gl += kb * b;
                }
                gv += kff_bar * n;
                g[lay.matern_variance()] = gv * sigmoid(params[lay.matern_variance()]);
                g[lay.matern_lengthscale()] = gl * sigmoid(params[lay.matern_lengthscale()]);
            } else {
                let t = p - 1;
                let (phi_z, phi_x) = f.phi.as_ref().expect("POI process features");
                let raw_a = params[lay.alpha_variance(t)];
                let a = softplus(raw_a);
                let raw_t = params[lay.theta(t)];
                let k = PointKernel { family: self.family, theta: softplus(raw_t) };
                let ga = (kuu_bar.dot(&f.kuu) + kuf_bar.dot(&f.kuf) + kff_bar * f.kff.sum()) / a;
                g[lay.alpha_variance(t)] = ga * sigmoid(raw_a);
                let phi_z_bar = (&kuu_bar * phi_z * 2.0 + &kuf_bar * phi_x) * a;
                let phi_x_bar = (kuf_bar.transpose() * phi_z + phi_x * (2.0 * kff_bar)) * a;
                let mut gt = 0.0;
                for (pb, &d) in phi_z_bar.iter().zip(self.d_zp[t].iter()) {
                    gt += pb * k.d_theta(d);
                }
                for (pb, &d) in phi_x_bar.iter().zip(self.d_xp[t].iter()) {
                    gt += pb * k.d_theta(d);
                }
                g[lay.theta(t)] = gt * sigmoid(raw_t);
            }
        }
        g
    }

    /// Replaces every q(w_p) by the maximizer of the bound for the current
    /// hyperparameters. Under the factorized posterior the optimal means
    /// solve one joint linear system, `w = B (sI + BᵀB)⁻¹ r` with `B` the
    /// stacked `Lk⁻¹ K_uf` blocks, and each optimal covariance
    /// `(I + B_p B_pᵀ / s)⁻¹` depends on its own process only.
    pub fn optimize_variational(&self, params: &mut [f64]) -> Result<()> {
        let lay = self.layout;
        let sigma = softplus(params[lay.noise()]);
        let s = sigma * sigma;
        let n = self.data.n();
        let fwd = (0..lay.n_processes())
            .map(|p| self.forward_process(params, p))
            .collect::<Result<Vec<_>>>()?;
        let resid = &self.data.y - self.charger_output(params);
        let mut g = DMatrix::<f64>::identity(n, n) * s;
        for f in &fwd {
            g.gemm_tr(1.0, &f.b, &f.b, 1.0);
        }
        let (lg, _) = cholesky_jittered(&g, 0.0, "variational system")?;
        let v = crate::linalg::chol_solve_vec(&lg, &resid);
        for (p, f) in fwd.iter().enumerate() {
            let mean = &f.b * &v;
            let mut prec = &f.b * f.b.transpose() / s;
            for i in 0..lay.m {
                prec[(i, i)] += 1.0;
            }
            let (lp, _) = cholesky_jittered(&prec, 0.0, "variational precision")?;
            let cov = crate::linalg::chol_solve(&lp, &DMatrix::identity(lay.m, lay.m));
            let cov = (&cov + cov.transpose()) * 0.5;
            let (lw, _) = cholesky_jittered(&cov, 0.0, "variational covariance")?;
            params[lay.q_mean(p)].copy_from_slice(mean.as_slice());
            pack_factor(&lw, &mut params[lay.q_factor(p)]);
        }
        Ok(())
    }
}

/// Gaussian log density of `y` under N(mean, var).
#[inline]
pub fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (y - mean).powi(2) / var)
}
