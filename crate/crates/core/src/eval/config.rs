//! Plain-text `key = value` run configuration with a stable hash.

use sha2::{Digest, Sha256};

use super::SplitConfig;
use crate::baselines::{default_dmax_grid, BaselineConfig};
use crate::error::{Error, Result};
use crate::gpmodel::{ChargerKind, ModelSpec};
use crate::kernels::KernelFamily;
use crate::optim::Schedule;

/// Everything a benchmark or sensitivity run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub split: SplitConfig,
    pub model: ModelSpec,
    pub baselines: BaselineConfig,
    pub dmax_grid: Vec<f64>,
    /// Number of split seeds for the repeated-splits mode (split seed,
    /// split seed + 1, ...).
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let mut model = ModelSpec::default();
        model.train.iterations = 400;
        model.train.learning_rate = 0.05;
        EvalConfig {
            split: SplitConfig::default(),
            model,
            baselines: BaselineConfig::default(),
            dmax_grid: default_dmax_grid(),
            repeats: 20,
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_else(|| "auto".into())
}

fn bad(key: &str, value: &str) -> Error {
    Error::Input(format!("invalid value {value:?} for config key {key}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v))
}

fn num_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn num_opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v)),
    }
}

impl EvalConfig {
    /// Canonical key/value pairs in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let b = &self.baselines;
        let sched = match m.train.schedule {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        };
        vec![
            ("split.ratio", self.split.ratio.to_string()),
            ("split.seed", self.split.seed.to_string()),
            ("split.repeats", self.repeats.to_string()),
            ("model.charger", m.charger_kind.name().into()),
            ("model.hidden", list(&m.hidden)),
            ("model.kernel", m.kernel_family.name().into()),
            ("model.inducing", opt(&m.inducing_count)),
            ("model.seed", m.seed.to_string()),
            ("model.iterations", m.train.iterations.to_string()),
            ("model.learning_rate", m.train.learning_rate.to_string()),
            ("model.schedule", sched.into()),
            ("model.jitter", m.train.jitter.to_string()),
            ("model.closed_form_q", m.train.closed_form_q.to_string()),
            ("model.theta_grid", list(&m.train.theta_grid)),
            ("model.theta_rescan_every", m.train.theta_rescan_every.to_string()),
            ("model.theta_rescans", m.train.theta_rescans.to_string()),
            ("baselines.gwr_bandwidths", list(&b.gwr_bandwidths)),
            ("baselines.kriging_iterations", b.kriging.iterations.to_string()),
            ("baselines.kriging_learning_rate", b.kriging.learning_rate.to_string()),
            ("baselines.forest_trees", b.forest.n_trees.to_string()),
            ("baselines.forest_depth", b.forest.max_depth.to_string()),
            ("baselines.forest_min_leaf", b.forest.min_leaf.to_string()),
            ("baselines.forest_max_features", opt(&b.forest.max_features)),
            ("baselines.forest_bootstrap", b.forest.bootstrap.to_string()),
            ("baselines.forest_seed", b.forest.seed.to_string()),
            ("baselines.nn_hidden", list(&b.nn.hidden)),
            ("baselines.nn_learning_rate", b.nn.learning_rate.to_string()),
            ("baselines.nn_max_epochs", b.nn.max_epochs.to_string()),
            ("baselines.nn_patience", b.nn.patience.to_string()),
            ("baselines.nn_validation_fraction", b.nn.validation_fraction.to_string()),
            ("baselines.nn_seed", b.nn.seed.to_string()),
            ("baselines.nn_coordinates", b.nn_coordinates.to_string()),
            ("baselines.cv_folds", b.cv_folds.to_string()),
            ("baselines.tune_passes", b.tune_passes.to_string()),
            ("baselines.dmax_grid", list(&self.dmax_grid)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Sets one key; unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let b = &mut self.baselines;
        match key {
            "split.ratio" => self.split.ratio = num(key, v)?,
            "split.seed" => self.split.seed = num(key, v)?,
            "split.repeats" => self.repeats = num(key, v)?,
            "model.charger" => m.charger_kind = ChargerKind::parse(v).ok_or_else(|| bad(key, v))?,
            "model.hidden" => m.hidden = num_list(key, v)?,
            "model.kernel" => m.kernel_family = KernelFamily::parse(v).ok_or_else(|| bad(key, v))?,
            "model.inducing" => m.inducing_count = num_opt(key, v)?,
            "model.seed" => m.seed = num(key, v)?,
            "model.iterations" => m.train.iterations = num(key, v)?,
            "model.learning_rate" => m.train.learning_rate = num(key, v)?,
            "model.schedule" => {
                m.train.schedule = match v {
                    "constant" => Schedule::Constant,
                    "cosine" => Schedule::Cosine,
                    _ => return Err(bad(key, v)),
                }
            }
            "model.jitter" => m.train.jitter = num(key, v)?,
            "model.closed_form_q" => m.train.closed_form_q = flag(key, v)?,
            "model.theta_grid" => m.train.theta_grid = num_list(key, v)?,
            "model.theta_rescan_every" => m.train.theta_rescan_every = num(key, v)?,
            "model.theta_rescans" => m.train.theta_rescans = num(key, v)?,
            "baselines.gwr_bandwidths" => b.gwr_bandwidths = num_list(key, v)?,
            "baselines.kriging_iterations" => b.kriging.iterations = num(key, v)?,
            "baselines.kriging_learning_rate" => b.kriging.learning_rate = num(key, v)?,
            "baselines.forest_trees" => b.forest.n_trees = num(key, v)?,
            "baselines.forest_depth" => b.forest.max_depth = num(key, v)?,
            "baselines.forest_min_leaf" => b.forest.min_leaf = num(key, v)?,
            "baselines.forest_max_features" => b.forest.max_features = num_opt(key, v)?,
            "baselines.forest_bootstrap" => b.forest.bootstrap = flag(key, v)?,
            "baselines.forest_seed" => b.forest.seed = num(key, v)?,
            "baselines.nn_hidden" => b.nn.hidden = num_list(key, v)?,
            "baselines.nn_learning_rate" => b.nn.learning_rate = num(key, v)?,
            "baselines.nn_max_epochs" => b.nn.max_epochs = num(key, v)?,
            "baselines.nn_patience" => b.nn.patience = num(key, v)?,
            "baselines.nn_validation_fraction" => b.nn.validation_fraction = num(key, v)?,
            "baselines.nn_seed" => b.nn.seed = num(key, v)?,
            "baselines.nn_coordinates" => b.nn_coordinates = flag(key, v)?,
            "baselines.cv_folds" => b.cv_folds = num(key, v)?,
            "baselines.tune_passes" => b.tune_passes = num(key, v)?,
            "baselines.dmax_grid" => self.dmax_grid = num_list(key, v)?,
            _ => return Err(Error::Input(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Input(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = EvalConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }
}
