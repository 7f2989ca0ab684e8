//! Splitting, metrics, benchmark and sensitivity runners, synthetic data.

pub mod bench;
pub mod config;
pub mod synth;

pub use bench::{calibration_gap, repeated_benchmark, run_benchmark, sensitivity, EvalReport, ReportRow, POI_MODEL_LABEL};
pub use config::EvalConfig;
pub use synth::{synth_generate, GroundTruth, SynthConfig, SynthType};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratio: 0.8, seed: 0 }
    }
}

/// Train and test datasets plus the station indices behind them.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Uniform random split with `floor(ratio * N)` training stations. Both
/// parts are standardized with statistics of the training part.
pub fn split(dataset: &Dataset, config: &SplitConfig) -> Result<Split> {
    let n = dataset.n_stations();
    if n < 5 {
        return Err(Error::Input(format!("need at least 5 stations to split, got {n}")));
    }
    if !(config.ratio > 0.0 && config.ratio < 1.0) {
        return Err(Error::Parameter(format!("split ratio {} outside (0, 1)", config.ratio)));
    }
    let n_train = (config.ratio * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Input("split leaves an empty part".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let perm = rand::seq::index::sample(&mut rng, n, n).into_vec();
    let mut train_idx = perm[..n_train].to_vec();
    let mut test_idx = perm[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = dataset
        .subset(&train_idx, dataset.target_stats, dataset.covariate_stats.clone())
        .restandardized()?;
    let test = dataset.subset(&test_idx, train.target_stats, train.covariate_stats.clone());
    Ok(Split { train, test, train_idx, test_idx })
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let mse = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Sum of Gaussian log densities.
pub fn test_loglik(mean: &[f64], var: &[f64], actual: &[f64]) -> Result<f64> {
    if mean.len() != actual.len() || var.len() != actual.len() {
        return Err(Error::Input("test_loglik length mismatch".into()));
    }
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Input(format!("non-positive predictive variance {v}")));
    }
    Ok(mean
        .iter()
        .zip(var)
        .zip(actual)
        .map(|((m, v), y)| crate::svi::log_normal(*y, *m, *v))
        .sum())
}
