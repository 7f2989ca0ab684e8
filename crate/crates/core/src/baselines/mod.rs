//! Comparison models: GWR, linear kriging, RF kriging and a dense network,
//! each on covariates plus optional engineered POI features.

pub mod features;
pub mod forest;
pub mod gwr;
pub mod kriging;
pub mod nn;

pub use features::{default_dmax_grid, density_features, distance_features, Design, FeatureConfig, FeatureMode};
pub use forest::{Forest, ForestConfig, RfKriging};
pub use gwr::{default_bandwidth_grid, Gwr};
pub use kriging::{Kriging, KrigingFit, KrigingParams, LinearKriging};
pub use nn::{NeuralNet, NnConfig};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    Gwr,
    LinearKriging,
    RfKriging,
    NeuralNet,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] =
        [BaselineKind::Gwr, BaselineKind::LinearKriging, BaselineKind::RfKriging, BaselineKind::NeuralNet];

    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::Gwr => "GWR",
            BaselineKind::LinearKriging => "Linear kriging",
            BaselineKind::RfKriging => "RF kriging",
            BaselineKind::NeuralNet => "Neural network",
        }
    }

    /// How the predictive variance is formed, for report footnotes.
    pub fn variance_model(&self) -> &'static str {
        match self {
            BaselineKind::Gwr => "kernel-weighted local residual variance",
            BaselineKind::LinearKriging | BaselineKind::RfKriging => "kriging variance plus nugget",
            BaselineKind::NeuralNet => "validation mean squared error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Candidate GWR bandwidths (km) scored by leave-one-out error.
    pub gwr_bandwidths: Vec<f64>,
    pub kriging: KrigingFit,
    pub forest: ForestConfig,
    pub nn: NnConfig,
    /// Feed planar coordinates to the network.
    pub nn_coordinates: bool,
    pub cv_folds: usize,
    /// Coordinate-wise passes over the types when tuning radii.
    pub tune_passes: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            gwr_bandwidths: default_bandwidth_grid(),
            kriging: KrigingFit::default(),
            forest: ForestConfig::default(),
            nn: NnConfig::default(),
            nn_coordinates: true,
            cv_folds: 5,
            tune_passes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted {
    Gwr(Gwr),
    LinearKriging(LinearKriging),
    RfKriging(RfKriging),
    NeuralNet(NeuralNet),
}

/// Settings fixed across the folds of radius tuning so that only the
/// features change between candidates.
#[derive(Debug, Clone, Copy, Default)]
struct Pinned {
    bandwidth: Option<f64>,
    kriging: Option<KrigingParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub design: Design,
    pub fitted: Fitted,
}

impl BaselineModel {
    pub fn fit(train: &Dataset, kind: BaselineKind, features: FeatureConfig, cfg: &BaselineConfig) -> Result<Self> {
        Self::fit_pinned(train, kind, features, cfg, Pinned::default())
    }

    fn fit_pinned(train: &Dataset, kind: BaselineKind, features: FeatureConfig, cfg: &BaselineConfig, pin: Pinned) -> Result<Self> {
        let coords = kind == BaselineKind::NeuralNet && cfg.nn_coordinates;
        let design = Design::new(train, features, coords)?;
        let x = design.matrix(train)?;
        let y = DVector::from_vec(train.standardized_target());
        let locs = train.locations();
        let fitted = match kind {
            BaselineKind::Gwr => Fitted::Gwr(match pin.bandwidth {
                Some(bw) => Gwr::fit(&x, &y, &locs, bw)?,
                None => Gwr::fit_auto(&x, &y, &locs, &cfg.gwr_bandwidths)?,
            }),
            BaselineKind::LinearKriging => Fitted::LinearKriging(match pin.kriging {
                Some(p) => LinearKriging::fit_with(&x, &y, &locs, p)?,
                None => LinearKriging::fit(&x, &y, &locs, &cfg.kriging)?,
            }),
            BaselineKind::RfKriging => Fitted::RfKriging(match pin.kriging {
                Some(p) => RfKriging::fit_with(&x, &y, &locs, &cfg.forest, p)?,
                None => RfKriging::fit(&x, &y, &locs, &cfg.forest, &cfg.kriging)?,
            }),
            BaselineKind::NeuralNet => Fitted::NeuralNet(NeuralNet::fit(&x, &y, &cfg.nn)?),
        };
        Ok(BaselineModel { kind, design, fitted })
    }

    /// Predictive means and variances on the standardized target scale.
    pub fn predict(&self, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.design.matrix(data)?;
        let locs = data.locations();
        Ok(match &self.fitted {
            Fitted::Gwr(m) => m.predict(&x, &locs)?,
            Fitted::LinearKriging(m) => m.predict(&x, &locs),
            Fitted::RfKriging(m) => m.predict(&x, &locs),
            Fitted::NeuralNet(m) => m.predict(&x),
        })
    }

    fn pinned(&self) -> Pinned {
        match &self.fitted {
            Fitted::Gwr(m) => Pinned { bandwidth: Some(m.bandwidth), kriging: None },
            Fitted::LinearKriging(m) => Pinned { bandwidth: None, kriging: Some(m.kriging.params) },
            Fitted::RfKriging(m) => Pinned { bandwidth: None, kriging: Some(m.kriging.params) },
            Fitted::NeuralNet(_) => Pinned::default(),
        }
    }
}

/// Fold assignment: a seeded permutation cut into `k` nearly equal parts.
pub fn folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < 2 * k {
        return Err(Error::Input(format!("cannot cut {n} stations into {k} folds of at least 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = rand::seq::index::sample(&mut rng, n, n).into_vec();
    let mut out = vec![Vec::new(); k];
    for (pos, i) in perm.into_iter().enumerate() {
        out[pos % k].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

fn cv_rmse(train: &Dataset, kind: BaselineKind, features: &FeatureConfig, cfg: &BaselineConfig, pin: Pinned, folds: &[Vec<usize>]) -> Result<f64> {
    let n = train.n_stations();
    let mut sse = 0.0;
    for held in folds {
        let keep: Vec<usize> = (0..n).filter(|i| held.binary_search(i).is_err()).collect();
        let fit = train.subset(&keep, train.target_stats, train.covariate_stats.clone());
        let test = train.subset(held, train.target_stats, train.covariate_stats.clone());
        let model = BaselineModel::fit_pinned(&fit, kind, features.clone(), cfg, pin)?;
        let (mean, _) = model.predict(&test)?;
        sse += mean.iter().zip(test.standardized_target()).map(|(m, a)| (m - a).powi(2)).sum::<f64>();
    }
    Ok((sse / n as f64).sqrt())
}

/// Per-type density radii minimizing k-fold cross-validated RMSE of `kind`
/// on `train`. Types are tuned one at a time with the others held at their
/// current value; ties go to the smaller radius. GWR bandwidth and kriging
/// parameters are fitted once on the full training set and held fixed
/// across candidates.
pub fn tune_dmax(
    train: &Dataset,
    kind: BaselineKind,
    mode: FeatureMode,
    grid: &[f64],
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Parameter("empty D_max grid".into()));
    }
    if let Some(r) = grid.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Parameter(format!("D_max candidate {r} is not positive")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let n_types = train.registry.len();
    let mut features = FeatureConfig { mode, dmax: vec![sorted[sorted.len() / 2]; n_types], grid: sorted.clone() };
    if sorted.len() == 1 || !mode.density() {
        features.dmax = vec![sorted[0]; n_types];
        return Ok(features.dmax);
    }
    let pin = BaselineModel::fit(train, kind, features.clone(), cfg)?.pinned();
    let folds = folds(train.n_stations(), cfg.cv_folds, seed)?;
    for _ in 0..cfg.tune_passes.max(1) {
        for t in 0..n_types {
            let mut best: Option<(f64, f64)> = None;
            for &r in &sorted {
                features.dmax[t] = r;
                let score = cv_rmse(train, kind, &features, cfg, pin, &folds)?;
                // ascending grid, so strict improvement keeps the smaller radius on ties
                if best.is_none_or(|(s, _)| score < s) {
                    best = Some((score, r));
                }
            }
            features.dmax[t] = best.expect("non-empty grid").1;
        }
    }
    Ok(features.dmax)
}
