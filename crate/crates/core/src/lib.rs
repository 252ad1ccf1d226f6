//! Bayesian Dirichlet regression by Gaussian pseudo-observations.
//!
//! The Dirichlet likelihood of each observation is expanded to second order
//! around the posterior mode, which turns the compositional response into
//! conditionally independent unit-variance Gaussian pseudo-data. With a
//! Gaussian prior on the coefficients the resulting posterior is solved
//! exactly. A random-walk Metropolis sampler on the exact posterior is
//! included as a reference.

pub mod compositional;
pub mod criteria;
pub mod error;
pub mod fitter;
pub mod likelihood;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod predict;
pub mod report;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
