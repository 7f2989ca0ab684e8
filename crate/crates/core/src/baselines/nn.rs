//! Dense network baseline trained on squared error with early stopping.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            hidden: vec![16, 16],
            learning_rate: 0.01,
            max_epochs: 2000,
            patience: 100,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    pub net: Mlp,
    pub params: Vec<f64>,
    /// Mean squared error on the validation slice; used as the predictive
    /// variance.
    pub variance: f64,
    pub epochs: usize,
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

fn mse(pred: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (pred - y).norm_squared() / y.len() as f64
}

impl NeuralNet {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &NnConfig) -> Result<NeuralNet> {
        let n = y.len();
        if n < 2 || x.nrows() != n {
            return Err(Error::Input(format!("network needs at least 2 aligned rows, got {n}")));
        }
        if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
            return Err(Error::Parameter("validation fraction must be in (0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let perm = rand::seq::index::sample(&mut rng, n, n).into_vec();
        let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
        let (val_idx, fit_idx) = perm.split_at(n_val);
        let (xf, yf) = (rows(x, fit_idx), DVector::from_iterator(fit_idx.len(), fit_idx.iter().map(|&i| y[i])));
        let (xv, yv) = (rows(x, val_idx), DVector::from_iterator(val_idx.len(), val_idx.iter().map(|&i| y[i])));

        let net = Mlp::new(x.ncols(), &cfg.hidden);
        let mut params = net.init_glorot(&mut rng);
        let mut adam = Adam::new(params.len());
        let mut best = (mse(&net.forward(&params, &xv), &yv), params.clone(), 0);
        let mut epochs = 0;
        for epoch in 1..=cfg.max_epochs {
            epochs = epoch;
            let pred = net.forward(&params, &xf);
            let loss = mse(&pred, &yf);
            if !loss.is_finite() {
                return Err(Error::Training { iteration: epoch, reason: format!("non-finite loss {loss}"), trace: Vec::new() });
            }
            let dout = (pred - &yf) * (2.0 / yf.len() as f64);
            let g = net.backward(&params, &xf, &dout);
            adam.descend(&mut params, &g, cfg.learning_rate);
            let v = mse(&net.forward(&params, &xv), &yv);
            if v < best.0 {
                best = (v, params.clone(), epoch);
            } else if epoch - best.2 >= cfg.patience {
                break;
            }
        }
        Ok(NeuralNet { net, params: best.1, variance: best.0.max(1e-6), epochs })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        let m = self.net.forward(&self.params, x);
        (m.iter().copied().collect(), vec![self.variance; x.nrows()])
    }
}
