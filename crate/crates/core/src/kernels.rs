//! Point-influence kernels, the Matérn 3/2 covariance and the covariance
//! induced on the per-type POI process.
//!
//! A POI of type γ at ω contributes `alpha * k(‖s - ω‖)` to the latent
//! surface. With independent `alpha ~ N(0, σ_α²)` the sum over all POIs of a
//! type is a zero-mean GP with the finite-rank covariance
//! `σ_α² Σ_ω k(‖s-ω‖) k(‖s'-ω‖)`, which is what [`PoiCovariance`] evaluates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::Point;
use crate::linalg;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    /// `max(0, 1 - d/θ)`: linear decay with a hard cut-off at θ.
    Relu,
    /// `exp(-d²/(2θ²))`.
    Gaussian,
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Relu => "relu",
            KernelFamily::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Some(KernelFamily::Relu),
            "gaussian" | "rbf" => Some(KernelFamily::Gaussian),
            _ => None,
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn relu_kernel(d: f64, theta: f64) -> Result<f64> {
    check_positive("theta", theta)?;
    Ok(relu_value(d, theta))
}

pub fn gaussian_kernel(d: f64, theta: f64) -> Result<f64> {
    check_positive("theta", theta)?;
    Ok(gaussian_value(d, theta))
}

pub fn matern32(d: f64, variance: f64, lengthscale: f64) -> Result<f64> {
    Ok(MaternKernel::new(variance, lengthscale)?.value(d))
}

#[inline]
fn relu_value(d: f64, theta: f64) -> f64 {
    (1.0 - d / theta).max(0.0)
}

#[inline]
fn gaussian_value(d: f64, theta: f64) -> f64 {
    (-d * d / (2.0 * theta * theta)).exp()
}

/// Distance kernel k_γ for one POI type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointKernel {
    pub family: KernelFamily,
    /// Cut-off (ReLU) or width (Gaussian), km.
    pub theta: f64,
}

impl PointKernel {
    pub fn new(family: KernelFamily, theta: f64) -> Result<Self> {
        check_positive("theta", theta)?;
        Ok(PointKernel { family, theta })
    }

    #[inline]
    pub fn value(&self, d: f64) -> f64 {
        match self.family {
            KernelFamily::Relu => relu_value(d, self.theta),
            KernelFamily::Gaussian => gaussian_value(d, self.theta),
        }
    }

    /// ∂k/∂θ. At the ReLU kink `d = θ` the zero one-sided derivative is used.
    #[inline]
    pub fn d_theta(&self, d: f64) -> f64 {
        let t = self.theta;
        match self.family {
            KernelFamily::Relu => {
                if d < t {
                    d / (t * t)
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => gaussian_value(d, t) * d * d / (t * t * t),
        }
    }

    /// Largest distance with non-zero influence, if the support is compact.
    pub fn support(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Relu => Some(self.theta),
            KernelFamily::Gaussian => None,
        }
    }
}

/// Matérn ν = 3/2 covariance of the spatial heterogeneity process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternKernel {
    pub variance: f64,
    pub lengthscale: f64,
}

impl MaternKernel {
    pub fn new(variance: f64, lengthscale: f64) -> Result<Self> {
        check_positive("variance", variance)?;
        check_positive("lengthscale", lengthscale)?;
        Ok(MaternKernel { variance, lengthscale })
    }

    #[inline]
    pub fn value(&self, d: f64) -> f64 {
        let r = SQRT3 * d / self.lengthscale;
        self.variance * (1.0 + r) * (-r).exp()
    }

    /// (∂k/∂variance, ∂k/∂lengthscale)
    #[inline]
    pub fn grads(&self, d: f64) -> (f64, f64) {
        let r = SQRT3 * d / self.lengthscale;
        let e = (-r).exp();
        ((1.0 + r) * e, self.variance * r * r * e / self.lengthscale)
    }
}

/// Covariance of h_γ induced by independent scaling factors on each POI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiCovariance {
    pub poi_locations: Vec<Point>,
    pub point_kernel: PointKernel,
    /// Prior variance σ_α² of the per-POI scaling factors.
    pub alpha_variance: f64,
}

impl PoiCovariance {
    pub fn new(poi_locations: Vec<Point>, point_kernel: PointKernel, alpha_variance: f64) -> Result<Self> {
        check_positive("alpha_variance", alpha_variance)?;
        Ok(PoiCovariance { poi_locations, point_kernel, alpha_variance })
    }

    /// Feature matrix Φ with Φ[i][j] = k(‖points_i - ω_j‖).
    pub fn features(&self, points: &[Point]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), self.poi_locations.len(), |i, j| {
            self.point_kernel.value(points[i].dist(&self.poi_locations[j]))
        })
    }
}

/// A stationary or data-defined covariance over planar points.
pub trait Covariance {
    fn cov(&self, a: &Point, b: &Point) -> f64;

    fn matrix(&self, a: &[Point], b: &[Point]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.cov(&a[i], &b[j]))
    }

    fn diag(&self, a: &[Point]) -> Vec<f64> {
        a.iter().map(|p| self.cov(p, p)).collect()
    }
}

impl Covariance for MaternKernel {
    fn cov(&self, a: &Point, b: &Point) -> f64 {
        self.value(a.dist(b))
    }
}

impl Covariance for PoiCovariance {
    fn cov(&self, a: &Point, b: &Point) -> f64 {
        let k = &self.point_kernel;
        self.alpha_variance
            * self
                .poi_locations
                .iter()
                .map(|w| k.value(a.dist(w)) * k.value(b.dist(w)))
                .sum::<f64>()
    }

    fn matrix(&self, a: &[Point], b: &[Point]) -> DMatrix<f64> {
        let fa = self.features(a);
        let fb = self.features(b);
        fa * fb.transpose() * self.alpha_variance
    }

    fn diag(&self, a: &[Point]) -> Vec<f64> {
        let f = self.features(a);
        f.row_iter().map(|r| self.alpha_variance * r.norm_squared()).collect()
    }
}

pub fn poi_cov(s: &Point, s_prime: &Point, cov: &PoiCovariance) -> f64 {
    cov.cov(s, s_prime)
}

/// Cross-covariance matrix between two point sets.
pub fn cov_matrix<C: Covariance + ?Sized>(a: &[Point], b: &[Point], cov: &C) -> DMatrix<f64> {
    cov.matrix(a, b)
}

/// Gram matrix of one point set with its jittered Cholesky factor.
#[derive(Debug, Clone)]
pub struct Gram {
    pub k: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    pub jitter: f64,
}

pub fn gram<C: Covariance + ?Sized>(a: &[Point], cov: &C, jitter: f64, name: &str) -> Result<Gram> {
    if jitter < 0.0 {
        return Err(Error::Parameter(format!("jitter must be non-negative, got {jitter}")));
    }
    let k = cov.matrix(a, a);
    let (chol, jitter) = linalg::cholesky_jittered(&k, jitter, name)?;
    Ok(Gram { k, chol, jitter })
}
