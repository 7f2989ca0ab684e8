//! Distance and density features of each station with respect to every POI
//! type, and the design matrices the baselines train on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{Dataset, Point, Stats};

/// Distance reported for a type with no POIs at all.
pub const MISSING_DISTANCE_KM: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMode {
    None,
    Distance,
    Density,
    Both,
}

impl FeatureMode {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMode::None => "none",
            FeatureMode::Distance => "distance",
            FeatureMode::Density => "density",
            FeatureMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Some(FeatureMode::None),
            "distance" => Some(FeatureMode::Distance),
            "density" => Some(FeatureMode::Density),
            "both" => Some(FeatureMode::Both),
            _ => None,
        }
    }

    pub fn distance(&self) -> bool {
        matches!(self, FeatureMode::Distance | FeatureMode::Both)
    }

    pub fn density(&self) -> bool {
        matches!(self, FeatureMode::Density | FeatureMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    /// D_max per POI type in km, registry order.
    pub dmax: Vec<f64>,
    /// Candidate radii for tuning.
    pub grid: Vec<f64>,
}

impl FeatureConfig {
    pub fn new(mode: FeatureMode, n_types: usize) -> Self {
        FeatureConfig { mode, dmax: vec![0.5; n_types], grid: default_dmax_grid() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.dmax.iter().find(|r| !(**r > 0.0)) {
            return Err(Error::Parameter(format!("density radius must be positive, got {r}")));
        }
        if self.grid.is_empty() || self.grid.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Parameter("radius grid must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// {0.1, 0.2, ..., 1.0} km.
pub fn default_dmax_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// N x |Γ| matrix of distances to the nearest POI of each type. Types with
/// no POIs get [`MISSING_DISTANCE_KM`] and are flagged in the second value.
pub fn distance_features(stations: &[Point], pois: &[Vec<Point>]) -> Result<(DMatrix<f64>, Vec<bool>)> {
    if pois.iter().all(|g| g.is_empty()) {
        return Err(Error::Input("no POIs of any type".into()));
    }
    let flagged: Vec<bool> = pois.iter().map(|g| g.is_empty()).collect();
    let f = DMatrix::from_fn(stations.len(), pois.len(), |i, t| {
        pois[t]
            .iter()
            .map(|w| stations[i].dist(w))
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
            .unwrap_or(MISSING_DISTANCE_KM)
    });
    Ok((f, flagged))
}

/// N x |Γ| counts of POIs strictly closer than D_max of their type.
pub fn density_features(stations: &[Point], pois: &[Vec<Point>], dmax: &[f64]) -> Result<DMatrix<f64>> {
    if dmax.len() != pois.len() {
        return Err(Error::Parameter(format!(
            "{} radii for {} POI types",
            dmax.len(),
            pois.len()
        )));
    }
    if let Some(r) = dmax.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Parameter(format!("density radius must be positive, got {r}")));
    }
    Ok(DMatrix::from_fn(stations.len(), pois.len(), |i, t| {
        pois[t].iter().filter(|w| stations[i].dist(w) < dmax[t]).count() as f64
    }))
}

/// POI locations of a dataset grouped by registry order.
pub fn poi_groups(dataset: &Dataset) -> Vec<Vec<Point>> {
    dataset
        .pois_by_type()
        .into_iter()
        .map(|g| g.into_iter().map(|p| p.location).collect())
        .collect()
}

/// Raw engineered features for `mode` (no covariates), column names included.
pub fn engineered(
    stations: &[Point],
    pois: &[Vec<Point>],
    type_names: &[String],
    config: &FeatureConfig,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut blocks = Vec::new();
    let mut names = Vec::new();
    if config.mode.distance() {
        blocks.push(distance_features(stations, pois)?.0);
        names.extend(type_names.iter().map(|t| format!("dist_{t}")));
    }
    if config.mode.density() {
        blocks.push(density_features(stations, pois, &config.dmax)?);
        names.extend(type_names.iter().map(|t| format!("count_{t}")));
    }
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(stations.len(), cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(&b);
        c += b.ncols();
    }
    Ok((out, names))
}

/// Column-wise z-scoring fitted on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub stats: Vec<Stats>,
}

impl Scaler {
    pub fn fit(x: &DMatrix<f64>) -> Scaler {
        let stats = x
            .column_iter()
            .map(|c| {
                let v: Vec<f64> = c.iter().copied().collect();
                match Stats::of(&v) {
                    Ok(s) if s.sd > 0.0 => s,
                    Ok(s) => Stats { mean: s.mean, sd: 1.0 },
                    Err(_) => Stats::identity(),
                }
            })
            .collect();
        Scaler { stats }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| self.stats[j].apply(x[(i, j)]))
    }
}

/// Builds the baseline design matrix: standardized covariates, engineered
/// POI features and optionally planar coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub features: FeatureConfig,
    pub include_coordinates: bool,
    pub names: Vec<String>,
    scaler: Option<Scaler>,
    pois: Vec<Vec<Point>>,
    type_names: Vec<String>,
}

impl Design {
    pub fn new(train: &Dataset, features: FeatureConfig, include_coordinates: bool) -> Result<Design> {
        features.validate()?;
        let pois = poi_groups(train);
        let type_names: Vec<String> = train.registry.types().iter().map(|t| t.name().to_string()).collect();
        if features.dmax.len() != pois.len() {
            return Err(Error::Parameter(format!(
                "{} radii for {} POI types",
                features.dmax.len(),
                pois.len()
            )));
        }
        let mut d = Design {
            features,
            include_coordinates,
            names: Vec::new(),
            scaler: None,
            pois,
            type_names,
        };
        let (raw, names) = d.raw(train)?;
        d.scaler = Some(Scaler::fit(&raw));
        d.names = train.covariate_names.clone();
        d.names.extend(names);
        Ok(d)
    }

    fn raw(&self, data: &Dataset) -> Result<(DMatrix<f64>, Vec<String>)> {
        let locs = data.locations();
        let (mut eng, mut names) = engineered(&locs, &self.pois, &self.type_names, &self.features)?;
        if self.include_coordinates {
            let c = eng.ncols();
            eng = eng.insert_columns(c, 2, 0.0);
            for (i, p) in locs.iter().enumerate() {
                eng[(i, c)] = p.x;
                eng[(i, c + 1)] = p.y;
            }
            names.push("x_km".into());
            names.push("y_km".into());
        }
        Ok((eng, names))
    }

    /// Design matrix for `data`, using the dataset's covariate statistics and
    /// the training scaler for engineered columns.
    pub fn matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let cov = data.standardized_covariates();
        let (raw, _) = self.raw(data)?;
        let eng = self.scaler.as_ref().expect("scaler fitted in new").apply(&raw);
        let mut x = DMatrix::zeros(cov.nrows(), cov.ncols() + eng.ncols());
        x.columns_mut(0, cov.ncols()).copy_from(&cov);
        x.columns_mut(cov.ncols(), eng.ncols()).copy_from(&eng);
        Ok(x)
    }
}
