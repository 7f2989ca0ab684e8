//! Additive latent Gaussian-process regression of charging-station
//! utilization on nearby points-of-interest.
//!
//! The model decomposes the standardized utilization of a station into a
//! charger-covariate term, one latent surface per POI type built from
//! compactly supported distance kernels, and a Matérn spatial heterogeneity
//! surface. Parameters are learned by maximizing a sparse variational bound.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod geodata;
pub mod gpmodel;
pub mod interpret;
pub mod kernels;
pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod svi;

pub use error::{Error, Result};
