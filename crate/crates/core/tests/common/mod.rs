#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use poigp_core::eval::{synth_generate, SynthConfig};
use poigp_core::geodata::{Dataset, Point};
use poigp_core::gpmodel::{ChargerKind, FittedModel, ModelSpec};
use poigp_core::kernels::{KernelFamily, MaternKernel};
use poigp_core::svi::{self, Hyperparameters, PoiKernelParams, ProcessState, TrainingData, VariationalState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small synthetic dataset with a briefly trained model on it.
pub fn small_model(seed: u64) -> (Dataset, FittedModel) {
    let cfg = SynthConfig { stations: 60, seed, ..SynthConfig::default() };
    let (ds, _) = synth_generate(&cfg).unwrap();
    let mut spec = ModelSpec { seed, inducing_count: Some(30), ..ModelSpec::default() };
    spec.charger_kind = ChargerKind::Linear;
    spec.train.iterations = 60;
    spec.train.learning_rate = 0.05;
    let model = svi::train(&spec, &ds).unwrap();
    (ds, model)
}

pub fn matern(d: f64, var: f64, ls: f64) -> f64 {
    let r = 3f64.sqrt() * d / ls;
    var * (1.0 + r) * (-r).exp()
}

pub fn point_k(fam: KernelFamily, d: f64, theta: f64) -> f64 {
    match fam {
        KernelFamily::Relu => (1.0 - d / theta).max(0.0),
        KernelFamily::Gaussian => (-d * d / (2.0 * theta * theta)).exp(),
    }
}

/// Sum of every process covariance between two point sets, built from the
/// kernel formulas directly.
pub fn total_cov(a: &[Point], b: &[Point], h: &Hyperparameters, pois: &[Vec<Point>], fam: KernelFamily) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let mut v = matern(a[i].dist(&b[j]), h.matern.variance, h.matern.lengthscale);
        for (t, ps) in pois.iter().enumerate() {
            let k = &h.poi[t];
            v += k.alpha_variance
                * ps.iter().map(|w| point_k(fam, a[i].dist(w), k.theta) * point_k(fam, b[j].dist(w), k.theta)).sum::<f64>();
        }
        v
    })
}

pub fn log_marginal(y: &DVector<f64>, g: &DVector<f64>, k: &DMatrix<f64>, noise_var: f64) -> f64 {
    let n = y.len();
    let mut c = k.clone();
    for i in 0..n {
        c[(i, i)] += noise_var;
    }
    let chol = c.cholesky().expect("SPD");
    let r = y - g;
    let alpha = chol.solve(&r);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * r.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

pub fn instance(n: usize, n_types: usize, pois_per_type: usize, seed: u64) -> TrainingData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locations: Vec<Point> = (0..n).map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect();
    let covariates = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
    let poi_locations = (0..n_types)
        .map(|_| (0..pois_per_type).map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect())
        .collect();
    TrainingData { locations, covariates, y, poi_locations }
}

pub fn hyper(n_types: usize) -> Hyperparameters {
    Hyperparameters {
        charger_params: vec![0.3, -0.2, 0.1],
        noise_sd: 0.4,
        matern: MaternKernel { variance: 0.8, lengthscale: 0.7 },
        poi: vec![PoiKernelParams { theta: 0.6, alpha_variance: 0.5 }; n_types],
    }
}

pub fn prior_state(m: usize, procs: usize) -> VariationalState {
    VariationalState { processes: (0..procs).map(|_| ProcessState::prior_scaled(m, 0.1)).collect() }
}

pub fn random_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, Vec<Point>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(n, |i, _| x.row(i).sum() + rng.random_range(-0.3..0.3));
    let locs = (0..n).map(|_| Point::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0))).collect();
    (x, y, locs)
}

/// Every feature, every "x <= observed value" cut, both sides non-empty.
pub fn brute_force_stump(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let n = y.len();
    let mut best = (f64::INFINITY, 0, 0.0);
    for f in 0..x.ncols() {
        for c in 0..n {
            let t = x[(c, f)];
            let left: Vec<f64> = (0..n).filter(|&i| x[(i, f)] <= t).map(|i| y[i]).collect();
            let right: Vec<f64> = (0..n).filter(|&i| x[(i, f)] > t).map(|i| y[i]).collect();
            if left.is_empty() || right.is_empty() {
                continue;
            }
            let sse = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|a| (a - m).powi(2)).sum::<f64>()
            };
            let s = sse(&left) + sse(&right);
            if s < best.0 {
                best = (s, f, t);
            }
        }
    }
    let (_, f, t) = best;
    let mean_of = |pred: &dyn Fn(usize) -> bool| {
        let v: Vec<f64> = (0..n).filter(|&i| pred(i)).map(|i| y[i]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (ml, mr) = (mean_of(&|i| x[(i, f)] <= t), mean_of(&|i| x[(i, f)] > t));
    (0..n).map(|i| if x[(i, f)] <= t { ml } else { mr }).collect()
}
