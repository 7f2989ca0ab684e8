//! Cut-off distances, per-POI scaling factors and rasters of the latent
//! surfaces of a fitted model.
//!
//! Per-POI factors are not parameters of the variational posterior. They are
//! recovered by conditioning the prior `α ~ N(0, σ_α² I)` on `q(u_γ)`
//! through the linear relation `u_γ = Φ_Z α`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geodata::{unproject, Point};
use crate::gpmodel::FittedModel;
use crate::kernels::{KernelFamily, PointKernel};
use crate::linalg::{cholesky_jittered, solve_lower};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiEffect {
    pub poi_id: String,
    pub poi_type: String,
    pub location: Point,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
}

/// One row of the per-type summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    pub poi_type: String,
    /// θ_γ. A kernel width rather than a hard cut-off for the Gaussian family.
    pub cutoff_km: f64,
    /// Mean of |alpha_mean| over the POIs of the type.
    pub avg_magnitude: f64,
    /// Sample sd of |alpha_mean| over the POIs of the type.
    pub magnitude_sd: f64,
    pub poi_count: usize,
}

/// θ_γ per POI type, in model order.
pub fn cutoff_distances(model: &FittedModel) -> Result<Vec<(String, f64)>> {
    model.ensure_trained()?;
    if model.spec.kernel_family == KernelFamily::Gaussian {
        log::warn!("Gaussian kernel: θ is a kernel width, not a cut-off distance");
    }
    Ok(model
        .poi_groups
        .iter()
        .zip(&model.hyper.poi)
        .map(|(g, k)| (g.poi_type.name().to_string(), k.theta))
        .collect())
}

/// Posterior mean and sd of every α_ρ given q(u_γ).
pub fn recover_alphas(model: &FittedModel) -> Result<Vec<PoiEffect>> {
    model.ensure_trained()?;
    let z = &model.inducing.locations;
    let jitter = model.spec.train.jitter;
    let mut out = Vec::new();
    for (t, group) in model.poi_groups.iter().enumerate() {
        let params = model.hyper.poi[t];
        let a = params.alpha_variance;
        let kernel = PointKernel::new(model.spec.kernel_family, params.theta)?;
        let phi_z = crate::kernels::PoiCovariance::new(group.locations.clone(), kernel, a)?.features(z);
        let kuu = &phi_z * phi_z.transpose() * a;
        let (lk, _) = cholesky_jittered(&kuu, jitter, &format!("K_uu[{}]", group.poi_type))?;
        // C = Lk⁻¹ Cov(u, α), M x P
        let c = solve_lower(&lk, &(phi_z * a));
        let q = &model.state.processes[t + 1];
        let mean: DVector<f64> = c.transpose() * &q.mean;
        let lwt_c = q.factor.transpose() * &c;
        for (r, id) in group.ids.iter().enumerate() {
            let var = a - c.column(r).norm_squared() + lwt_c.column(r).norm_squared();
            out.push(PoiEffect {
                poi_id: id.clone(),
                poi_type: group.poi_type.name().to_string(),
                location: group.locations[r],
                alpha_mean: mean[r],
                alpha_sd: var.max(0.0).sqrt(),
            });
        }
    }
    Ok(out)
}

/// Mean and sample sd of |alpha_mean| over the effects of `poi_type`.
pub fn average_magnitude(effects: &[PoiEffect], poi_type: &str) -> Result<(f64, f64)> {
    let mags: Vec<f64> = effects
        .iter()
        .filter(|e| e.poi_type == poi_type)
        .map(|e| e.alpha_mean.abs())
        .collect();
    if mags.is_empty() {
        return Err(Error::Input(format!("no POIs of type {poi_type}")));
    }
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let sd = if mags.len() > 1 {
        (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, sd))
}

pub fn type_summaries(model: &FittedModel, effects: &[PoiEffect]) -> Result<Vec<TypeSummary>> {
    cutoff_distances(model)?
        .into_iter()
        .map(|(name, theta)| {
            let poi_count = effects.iter().filter(|e| e.poi_type == name).count();
            let (avg, sd) = if poi_count == 0 { (0.0, 0.0) } else { average_magnitude(effects, &name)? };
            Ok(TypeSummary {
                poi_type: name,
                cutoff_km: theta,
                avg_magnitude: avg,
                magnitude_sd: sd,
                poi_count,
            })
        })
        .collect()
}

pub fn summary_csv(rows: &[TypeSummary]) -> String {
    let mut s = String::from("type,cutoff_km,avg_effect,sd\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.poi_type, r.cutoff_km, r.avg_magnitude, r.magnitude_sd);
    }
    s
}

pub fn effects_csv(effects: &[PoiEffect], model: &FittedModel) -> String {
    let mut s = String::from("poi_id,type,x_km,y_km,lon,lat,alpha_mean,alpha_sd\n");
    for e in effects {
        let ll = unproject(e.location, model.reference);
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.7},{:.7},{:.8},{:.8}",
            e.poi_id, e.poi_type, e.location.x, e.location.y, ll.lon, ll.lat, e.alpha_mean, e.alpha_sd
        );
    }
    s
}

/// Axis-aligned box in projected km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn around(points: &[Point]) -> Result<BBox> {
        if points.is_empty() {
            return Err(Error::Input("cannot bound an empty point set".into()));
        }
        let mut b = BBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in points {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        Ok(b)
    }
}

/// Posterior of one latent surface on a regular grid of cell centres,
/// stored row by row from `min_y` upwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub component: String,
    pub bbox: BBox,
    pub cell_km: f64,
    pub nx: usize,
    pub ny: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Raster {
    pub fn center(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.bbox.min_x + (ix as f64 + 0.5) * self.cell_km,
            self.bbox.min_y + (iy as f64 + 0.5) * self.cell_km,
        )
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.ny)
            .flat_map(|iy| (0..self.nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| self.center(ix, iy))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x_km,y_km,mean,variance\n");
        for (i, c) in self.centers().iter().enumerate() {
            let _ = writeln!(s, "{:.4},{:.4},{:.8e},{:.8e}", c.x, c.y, self.mean[i], self.variance[i]);
        }
        s
    }

    /// One polygon feature per cell, corners back-projected to lon/lat.
    pub fn to_geojson(&self, reference: crate::geodata::LonLat) -> String {
        let h = self.cell_km / 2.0;
        let features: Vec<serde_json::Value> = self
            .centers()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let ring: Vec<[f64; 2]> = [(-h, -h), (h, -h), (h, h), (-h, h), (-h, -h)]
                    .iter()
                    .map(|(dx, dy)| {
                        let ll = unproject(Point::new(c.x + dx, c.y + dy), reference);
                        [ll.lon, ll.lat]
                    })
                    .collect();
                serde_json::json!({
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                    "properties": {"component": self.component, "mean": self.mean[i], "variance": self.variance[i]},
                })
            })
            .collect();
        serde_json::json!({"type": "FeatureCollection", "features": features}).to_string()
    }
}

/// Posterior marginals of `component` (`h0` or a POI type) at the centres of
/// a grid covering `bbox`.
pub fn spatial_grid(model: &FittedModel, component: &str, bbox: BBox, cell_km: f64) -> Result<Raster> {
    model.ensure_trained()?;
    if !(cell_km > 0.0) || !cell_km.is_finite() {
        return Err(Error::Parameter(format!("cell size must be positive, got {cell_km}")));
    }
    let (w, h) = (bbox.max_x - bbox.min_x, bbox.max_y - bbox.min_y);
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(Error::Input(format!("degenerate bounding box {bbox:?}")));
    }
    let p = model
        .process_index(component)
        .ok_or_else(|| Error::Parameter(format!("unknown component {component:?}")))?;
    let nx = ((w / cell_km).ceil() as usize).max(1);
    let ny = ((h / cell_km).ceil() as usize).max(1);
    let mut raster = Raster {
        component: model.process_name(p),
        bbox,
        cell_km,
        nx,
        ny,
        mean: Vec::new(),
        variance: Vec::new(),
    };
    let (mean, var) = model.process_posterior(p, &raster.centers())?;
    raster.mean = mean.as_slice().to_vec();
    raster.variance = var.as_slice().to_vec();
    Ok(raster)
}
