//! Sparse variational inference for the sum of latent GPs.
//!
//! The heterogeneity surface h_0 and one process per POI type share M
//! inducing locations sampled from the training stations. Each process has
//! its own Gaussian q(u_p); the bound is maximized on the full batch of
//! stations. By default each q(u_p) is held at its closed-form optimum given
//! the hyperparameters, which Adam then updates, with occasional grid scans
//! over the POI ranges θ.

mod objective;

pub use objective::{log_normal, Evaluation, Layout, Objective, TrainingData};

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{Dataset, Point};
use crate::gpmodel::{ChargerFunction, FittedModel, ModelSpec, PoiGroup, FORMAT_VERSION};
use crate::kernels::{Covariance, MaternKernel, PoiCovariance, PointKernel};
use crate::linalg::{cholesky_jittered, log_det_chol, solve_lower, solve_lower_vec};
use crate::optim::{softplus_inv, Adam, Schedule};

/// Inducing locations, a subset of the training stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingSet {
    /// Indices into the training stations.
    pub indices: Vec<usize>,
    pub locations: Vec<Point>,
    pub seed: u64,
}

/// Whitened Gaussian q(w) with `u = chol(K_uu) w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessState {
    pub mean: DVector<f64>,
    /// Lower triangular with a strictly positive diagonal.
    pub factor: DMatrix<f64>,
}

impl ProcessState {
    pub fn prior_scaled(m: usize, scale: f64) -> Self {
        ProcessState {
            mean: DVector::zeros(m),
            factor: DMatrix::identity(m, m) * scale,
        }
    }

    /// Mean and covariance of q(u) given the factor of `K_uu`.
    pub fn unwhitened(&self, k_chol: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = k_chol * &self.mean;
        let l = k_chol * &self.factor;
        let s = &l * l.transpose();
        (m, s)
    }
}

/// Variational state for every process, h_0 first then POI types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub processes: Vec<ProcessState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoiKernelParams {
    pub theta: f64,
    pub alpha_variance: f64,
}

/// Every learned non-variational parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub charger_params: Vec<f64>,
    pub noise_sd: f64,
    pub matern: MaternKernel,
    pub poi: Vec<PoiKernelParams>,
}

/// Covariance of one latent process.
#[derive(Debug, Clone)]
pub enum ProcessKernel {
    Heterogeneity(MaternKernel),
    Poi(PoiCovariance),
}

impl Covariance for ProcessKernel {
    fn cov(&self, a: &Point, b: &Point) -> f64 {
        match self {
            ProcessKernel::Heterogeneity(k) => k.cov(a, b),
            ProcessKernel::Poi(k) => k.cov(a, b),
        }
    }
    fn matrix(&self, a: &[Point], b: &[Point]) -> DMatrix<f64> {
        match self {
            ProcessKernel::Heterogeneity(k) => k.matrix(a, b),
            ProcessKernel::Poi(k) => k.matrix(a, b),
        }
    }
    fn diag(&self, a: &[Point]) -> Vec<f64> {
        match self {
            ProcessKernel::Heterogeneity(k) => k.diag(a),
            ProcessKernel::Poi(k) => k.diag(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub jitter: f64,
    /// Optimize only the variational distributions.
    pub freeze_hyperparameters: bool,
    /// Scale of the initial whitened factor.
    pub init_factor_scale: f64,
    /// Set the variational distributions to their closed-form optimum before
    /// every gradient step, leaving only the hyperparameters to Adam.
    pub closed_form_q: bool,
    /// Candidate θ values (km) scanned type by type before the gradient
    /// phase; empty disables the scan. Needs `closed_form_q`.
    pub theta_grid: Vec<f64>,
    /// Repeat the scan every this many iterations (0 disables).
    pub theta_rescan_every: usize,
    /// Number of repeated scans after the initial one.
    pub theta_rescans: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            learning_rate: 0.01,
            schedule: Schedule::Constant,
            jitter: crate::linalg::DEFAULT_JITTER,
            freeze_hyperparameters: false,
            init_factor_scale: 0.1,
            closed_form_q: true,
            theta_grid: default_theta_grid(),
            theta_rescan_every: 100,
            theta_rescans: 2,
        }
    }
}

/// Geometric grid from 0.1 to 2 km.
pub fn default_theta_grid() -> Vec<f64> {
    (0..=20).map(|i| 0.1 * 20f64.powf(i as f64 / 20.0)).collect()
}

/// Coordinate-wise scan of θ_γ over `grid`, keeping for each type the value
/// whose bound (with q at its optimum) is largest. Two passes over the types.
fn scan_thetas(objective: &Objective, params: &mut [f64], grid: &[f64]) -> Result<()> {
    let lay = objective.layout();
    let bound = |p: &mut [f64]| -> Result<f64> {
        objective.optimize_variational(p)?;
        Ok(objective.evaluate(p, false)?.elbo)
    };
    for _ in 0..2 {
        for t in 0..lay.n_types {
            let mut best = (bound(params)?, params[lay.theta(t)]);
            for &theta in grid {
                params[lay.theta(t)] = softplus_inv(theta);
                let e = bound(params)?;
                if e > best.0 {
                    best = (e, params[lay.theta(t)]);
                }
            }
            params[lay.theta(t)] = best.1;
        }
    }
    objective.optimize_variational(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub elbo: f64,
    /// Euclidean norm of the gradient restricted to each parameter block.
    pub grad_norms: Vec<f64>,
}

/// Samples `m` inducing locations without replacement and sets every q(u_p)
/// to a zero mean with a factor of `0.1 I`.
pub fn init_state(
    train_locations: &[Point],
    m: usize,
    seed: u64,
    n_processes: usize,
) -> Result<(InducingSet, VariationalState)> {
    let n = train_locations.len();
    if m == 0 || m > n {
        return Err(Error::Parameter(format!(
            "inducing count must be in 1..={n}, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, n, m).into_vec();
    let locations = indices.iter().map(|&i| train_locations[i]).collect();
    let state = VariationalState {
        processes: (0..n_processes).map(|_| ProcessState::prior_scaled(m, 0.1)).collect(),
    };
    Ok((InducingSet { indices, locations, seed }, state))
}

/// KL(N(m, L L^T) ‖ N(0, K_uu)).
pub fn kl_term(m: &DVector<f64>, l: &DMatrix<f64>, k_uu: &DMatrix<f64>, jitter: f64) -> Result<f64> {
    let (lk, _) = cholesky_jittered(k_uu, jitter, "K_uu")?;
    let n = m.len() as f64;
    let a = solve_lower(&lk, l);
    let b = solve_lower_vec(&lk, m);
    let log_det_s = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].abs().ln()).sum::<f64>();
    Ok(0.5 * (a.norm_squared() + b.norm_squared() - n + log_det_chol(&lk) - log_det_s))
}

/// Marginals of q(h_p) at `query`: `∫ p(h* | u) q(u) du`.
pub fn posterior_at<C: Covariance + ?Sized>(
    state: &ProcessState,
    kernel: &C,
    inducing: &[Point],
    query: &[Point],
    jitter: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let kuu = kernel.matrix(inducing, inducing);
    let (lk, _) = cholesky_jittered(&kuu, jitter, "K_uu")?;
    let kuq = kernel.matrix(inducing, query);
    let b = solve_lower(&lk, &kuq);
    let mean = b.transpose() * &state.mean;
    let lwt_b = state.factor.transpose() * &b;
    let diag = kernel.diag(query);
    let var = DVector::from_fn(query.len(), |i, _| {
        (diag[i] - b.column(i).norm_squared() + lwt_b.column(i).norm_squared()).max(1e-10)
    });
    Ok((mean, var))
}

/// Binds a dataset to the model inputs: standardized covariates and target,
/// plus the POIs of each type in scope.
pub fn training_data(spec: &ModelSpec, dataset: &Dataset) -> Result<(TrainingData, Vec<PoiGroup>)> {
    let types = spec.types_in_scope(&dataset.registry)?;
    let groups: Vec<PoiGroup> = types
        .iter()
        .map(|t| PoiGroup {
            poi_type: t.clone(),
            ids: dataset.pois.iter().filter(|p| &p.poi_type == t).map(|p| p.id.clone()).collect(),
            locations: dataset.pois.iter().filter(|p| &p.poi_type == t).map(|p| p.location).collect(),
        })
        .collect();
    let data = TrainingData {
        locations: dataset.locations(),
        covariates: dataset.standardized_covariates(),
        y: DVector::from_vec(dataset.standardized_target()),
        poi_locations: groups.iter().map(|g| g.locations.clone()).collect(),
    };
    Ok((data, groups))
}

/// Initial hyperparameters: θ_γ = 0.3 km, Matérn (0.5, 1 km), σ = 0.5,
/// σ_α² = 0.1, charger weights ~ N(0, 0.1²).
pub fn initial_hyperparameters(charger: &ChargerFunction, n_types: usize) -> Hyperparameters {
    Hyperparameters {
        charger_params: charger.params.clone(),
        noise_sd: 0.5,
        matern: MaternKernel { variance: 0.5, lengthscale: 1.0 },
        poi: vec![PoiKernelParams { theta: 0.3, alpha_variance: 0.1 }; n_types],
    }
}

/// Maximizes the ELBO.
pub fn train(spec: &ModelSpec, dataset: &Dataset) -> Result<FittedModel> {
    spec.validate()?;
    let started = Instant::now();
    let (data, groups) = training_data(spec, dataset)?;
    let n = data.n();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 training stations, got {n}")));
    }
    let m = spec.inducing_count.unwrap_or(n.min(100));
    if m > n {
        return Err(Error::Parameter(format!("inducing count {m} exceeds {n} training stations")));
    }
    let n_types = groups.len();
    let (inducing, mut state) = init_state(&data.locations, m, spec.seed, n_types + 1)?;
    for p in &mut state.processes {
        *p = ProcessState::prior_scaled(m, spec.train.init_factor_scale);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9e37_79b9));
    let charger = ChargerFunction::init(spec.charger_kind, data.covariates.ncols(), &spec.hidden, &mut rng);
    let hyper = initial_hyperparameters(&charger, n_types);

    let objective = Objective::new(&data, &inducing.locations, charger.net.clone(), spec.kernel_family, spec.train.jitter)?;
    let layout = objective.layout();
    let mut params = layout.encode(&hyper, &state);
    // Adam only touches what the closed-form sweeps and the freeze flag leave
    let mask: Vec<bool> = layout
        .variational_mask()
        .into_iter()
        .map(|var| if var { !spec.train.closed_form_q } else { !spec.train.freeze_hyperparameters })
        .collect();

    let mut names = vec!["h0".to_string()];
    names.extend(groups.iter().map(|g| g.poi_type.name().to_string()));
    let blocks = layout.blocks(&names);

    let scanning = spec.train.closed_form_q && !spec.train.theta_grid.is_empty();
    if scanning {
        scan_thetas(&objective, &mut params, &spec.train.theta_grid)
            .map_err(|e| Error::Training { iteration: 0, reason: e.to_string(), trace: Vec::new() })?;
    }
    let mut adam = Adam::new(layout.len());
    let iterations = spec.train.iterations;
    let mut trace = Vec::with_capacity(iterations + 1);
    let abort = |iteration: usize, reason: String, trace: &[TraceEntry]| Error::Training {
        iteration,
        reason,
        trace: trace.iter().map(|t| t.elbo).collect(),
    };
    for it in 0..=iterations {
        let every = spec.train.theta_rescan_every;
        if scanning && every > 0 && it > 0 && it < iterations && it % every == 0 && it / every <= spec.train.theta_rescans {
            scan_thetas(&objective, &mut params, &spec.train.theta_grid)
                .map_err(|e| abort(it, e.to_string(), &trace))?;
        }
        if spec.train.closed_form_q {
            objective
                .optimize_variational(&mut params)
                .map_err(|e| abort(it, e.to_string(), &trace))?;
        }
        let ev = objective
            .evaluate(&params, it < iterations)
            .map_err(|e| abort(it, e.to_string(), &trace))?;
        if !ev.elbo.is_finite() {
            return Err(abort(it, format!("non-finite ELBO {}", ev.elbo), &trace));
        }
        let grad_norms = match &ev.grad {
            Some(g) => blocks
                .iter()
                .map(|(_, r)| g[r.clone()].iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect(),
            None => Vec::new(),
        };
        trace.push(TraceEntry { iteration: it, elbo: ev.elbo, grad_norms });
        if let Some(g) = ev.grad {
            if let Some((name, _)) = blocks.iter().find(|(_, r)| g[r.clone()].iter().any(|v| !v.is_finite())) {
                return Err(abort(it, format!("non-finite gradient in block {name}"), &trace));
            }
            let lr = spec.train.schedule.rate(spec.train.learning_rate, it, iterations);
            adam.ascend(&mut params, &g, lr, Some(&mask));
        }
    }
    let (hyper, state) = layout.decode(&params);
    log::info!(
        "trained {} iterations in {:.1}s, final ELBO {:.3}",
        iterations,
        started.elapsed().as_secs_f64(),
        trace.last().map(|t| t.elbo).unwrap_or(f64::NAN)
    );
    let charger = ChargerFunction { params: hyper.charger_params.clone(), ..charger };
    Ok(FittedModel {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        poi_groups: groups,
        charger,
        hyper,
        inducing,
        state,
        target_stats: dataset.target_stats,
        covariate_stats: dataset.covariate_stats.clone(),
        covariate_names: dataset.covariate_names.clone(),
        reference: dataset.reference,
        block_names: blocks.into_iter().map(|(n, _)| n).collect(),
        trace,
    })
}

impl FittedModel {
    pub fn process_kernel(&self, p: usize) -> Result<ProcessKernel> {
        if p == 0 {
            return Ok(ProcessKernel::Heterogeneity(self.hyper.matern));
        }
        let g = self
            .poi_groups
            .get(p - 1)
            .ok_or_else(|| Error::Parameter(format!("no process {p}")))?;
        let k = &self.hyper.poi[p - 1];
        Ok(ProcessKernel::Poi(PoiCovariance::new(
            g.locations.clone(),
            PointKernel::new(self.spec.kernel_family, k.theta)?,
            k.alpha_variance,
        )?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inducing_sampling() {
        let pts: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 0.0)).collect();
        let (ind, st) = init_state(&pts, 10, 7, 3).unwrap();
        let mut idx = ind.indices.clone();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert_eq!(st.processes.len(), 3);
        assert_eq!(st.processes[0].factor[(0, 0)], 0.1);
        let (again, _) = init_state(&pts, 10, 7, 3).unwrap();
        assert_eq!(ind, again);
        let (one, _) = init_state(&pts, 1, 7, 1).unwrap();
        assert_eq!(one.locations.len(), 1);
        assert!(matches!(init_state(&pts, 11, 7, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn kl_zero_when_q_equals_prior() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        let l = k.clone().cholesky().unwrap().unpack();
        let kl = kl_term(&DVector::zeros(2), &l, &k, 0.0).unwrap();
        assert!(kl.abs() < 1e-12);
        // shifting the mean adds exactly ½ vᵀK⁻¹v
        let v = DVector::from_vec(vec![0.4, -1.2]);
        let kl = kl_term(&v, &l, &k, 0.0).unwrap();
        let direct = 0.5 * v.dot(&(k.clone().try_inverse().unwrap() * &v));
        assert!((kl - direct).abs() < 1e-12);
    }

    #[test]
    fn posterior_zero_mean_for_zero_state() {
        let k = MaternKernel::new(1.0, 1.0).unwrap();
        let z = [Point::ORIGIN, Point::new(1.0, 0.0)];
        let st = ProcessState::prior_scaled(2, 0.1);
        let (m, v) = posterior_at(&st, &k, &z, &[Point::new(0.3, 0.3)], 1e-6).unwrap();
        assert_eq!(m[0], 0.0);
        assert!(v[0] > 0.0);
    }

    #[test]
    fn posterior_interpolates_at_inducing_location() {
        let k = MaternKernel::new(1.0, 0.5).unwrap();
        let z = [Point::ORIGIN, Point::new(1.0, 0.0)];
        let kuu = k.matrix(&z, &z);
        let (lk, _) = cholesky_jittered(&kuu, 1e-10, "K").unwrap();
        // target unwhitened mean (0.7, -0.2) with S -> 0
        let target = DVector::from_vec(vec![0.7, -0.2]);
        let st = ProcessState {
            mean: solve_lower_vec(&lk, &target),
            factor: DMatrix::identity(2, 2) * 1e-9,
        };
        let (m, v) = posterior_at(&st, &k, &z, &z, 1e-10).unwrap();
        assert!((m[0] - 0.7).abs() < 1e-8 && (m[1] + 0.2).abs() < 1e-8);
        assert!(v[0] < 1e-8 && v[1] < 1e-8);
    }
}
