//! Synthetic datasets drawn from the additive POI process, with the planted
//! ground truth kept alongside.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{unproject, Dataset, LonLat, Poi, PoiType, Point, Station, TypeRegistry};
use crate::kernels::{KernelFamily, MaternKernel, PointKernel};
use crate::linalg::cholesky_jittered;

/// Planted parameters of one POI type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthType {
    pub name: String,
    pub count: usize,
    pub theta: f64,
    pub sigma_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub stations: usize,
    pub types: Vec<SynthType>,
    pub kernel_family: KernelFamily,
    pub matern_variance: f64,
    pub matern_lengthscale: f64,
    pub noise_sd: f64,
    /// Linear charger weights, one per covariate.
    pub charger_weights: Vec<f64>,
    /// Width and height of the study area in km, centred on `reference`.
    pub bbox_km: (f64, f64),
    pub reference: LonLat,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// The acceptance configuration: cut-offs mirror the Amsterdam estimates
    /// and education carries the largest per-POI magnitude.
    fn default() -> Self {
        let t = |name: &str, count, theta, sigma_alpha| SynthType {
            name: name.into(),
            count,
            theta,
            sigma_alpha,
        };
        SynthConfig {
            stations: 300,
            types: vec![
                t("Restaurant", 25, 0.30, 1.5),
                t("Store", 25, 0.28, 1.5),
                t("Education", 20, 0.64, 3.0),
                t("PublicTransport", 25, 0.35, 1.5),
            ],
            kernel_family: KernelFamily::Relu,
            matern_variance: 0.1,
            matern_lengthscale: 1.0,
            noise_sd: 0.2,
            charger_weights: vec![0.4, 0.3, -0.2, 0.1],
            bbox_km: (3.0, 3.0),
            reference: LonLat::new(4.9, 52.37),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.stations < 2 {
            return bad(format!("need at least 2 stations, got {}", self.stations));
        }
        if !(self.bbox_km.0 > 0.0 && self.bbox_km.1 > 0.0) {
            return bad("bounding box must have positive extent".into());
        }
        if !(self.noise_sd > 0.0) {
            return bad("noise sd must be positive".into());
        }
        if !(self.matern_variance >= 0.0 && self.matern_lengthscale > 0.0) {
            return bad("Matérn variance must be >= 0 and lengthscale > 0".into());
        }
        if self.types.is_empty() {
            return bad("at least one POI type required".into());
        }
        for t in &self.types {
            if !(t.theta > 0.0) || !(t.sigma_alpha >= 0.0) || t.count == 0 {
                return bad(format!("invalid parameters for type {}", t.name));
            }
        }
        Ok(())
    }
}

/// Planted values behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per type, one α per POI in dataset order.
    pub alphas: Vec<Vec<f64>>,
    pub thetas: Vec<f64>,
    /// Latent values at the stations, raw (unstandardized) scale.
    pub charger: Vec<f64>,
    pub h0: Vec<f64>,
    pub h_types: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    pub y: Vec<f64>,
}

/// Draws stations and POIs uniformly in the box and the response from the
/// additive model. The response is mapped affinely into [0.05, 0.95] so it
/// is a valid utilization; standardization removes the map again.
pub fn synth_generate(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = config.bbox_km;
    let uniform_point = |rng: &mut ChaCha8Rng| {
        Point::new((rng.random::<f64>() - 0.5) * w, (rng.random::<f64>() - 0.5) * h)
    };
    let n = config.stations;
    let k = config.charger_weights.len();
    let locations: Vec<Point> = (0..n).map(|_| uniform_point(&mut rng)).collect();
    let covariates: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let mut pois = Vec::new();
    let mut alphas = Vec::new();
    let mut thetas = Vec::new();
    let mut h_types = Vec::new();
    for t in &config.types {
        let kernel = PointKernel::new(config.kernel_family, t.theta)?;
        let ty = PoiType::new(t.name.clone());
        let mut a = Vec::with_capacity(t.count);
        let mut hv = vec![0.0; n];
        for j in 0..t.count {
            let loc = uniform_point(&mut rng);
            let alpha = t.sigma_alpha * { let z: f64 = StandardNormal.sample(&mut rng); z };
            for (i, s) in locations.iter().enumerate() {
                hv[i] += alpha * kernel.value(s.dist(&loc));
            }
            a.push(alpha);
            pois.push(Poi {
                id: format!("{}-{j}", t.name),
                lonlat: unproject(loc, config.reference),
                location: loc,
                poi_type: ty.clone(),
            });
        }
        alphas.push(a);
        thetas.push(t.theta);
        h_types.push(hv);
    }

    let h0 = if config.matern_variance > 0.0 {
        let kern = MaternKernel::new(config.matern_variance, config.matern_lengthscale)?;
        let kmat = DMatrix::from_fn(n, n, |i, j| kern.value(locations[i].dist(&locations[j])));
        let (l, _) = cholesky_jittered(&kmat, 1e-8, "K_h0")?;
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        (l * z).iter().copied().collect()
    } else {
        vec![0.0; n]
    };
    let charger: Vec<f64> = covariates
        .iter()
        .map(|x| x.iter().zip(&config.charger_weights).map(|(a, b)| a * b).sum())
        .collect();
    let noise: Vec<f64> = (0..n)
        .map(|_| config.noise_sd * { let z: f64 = StandardNormal.sample(&mut rng); z })
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| charger[i] + h0[i] + h_types.iter().map(|hv| hv[i]).sum::<f64>() + noise[i])
        .collect();

    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let stations = (0..n)
        .map(|i| Station {
            id: format!("S{i:04}"),
            lonlat: unproject(locations[i], config.reference),
            location: locations[i],
            utilization: 0.05 + 0.9 * (y[i] - lo) / span,
            covariates: covariates[i].clone(),
        })
        .collect();
    let registry = TypeRegistry::new(config.types.iter().map(|t| PoiType::new(t.name.clone())).collect())?;
    let names = (0..k).map(|j| format!("x{}", j + 1)).collect();
    let dataset = Dataset::new(stations, pois, config.reference, registry, names)?;
    Ok((
        dataset,
        GroundTruth { alphas, thetas, charger, h0, h_types, noise, y },
    ))
}
