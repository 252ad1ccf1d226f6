//! Synthetic data sets: uniform covariates, then Dirichlet responses with
//! `α = exp(A x)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compositional::{sample_dirichlet_into, CompositionMatrix};
use crate::error::{Error, Result};
use crate::likelihood::check_predictor;
use crate::model::{build_design_matrix, CovariateTable, FormulaSpec};

/// Four intercept-only categories.
pub const SIMULATION_ONE_FORMULA: &str = "y ~ 1 | 1 | 1 | 1";
pub const SIMULATION_ONE_TRUTH: [f64; 4] = [-2.4, 1.2, -3.1, 1.3];

/// One covariate per category; coefficients in category-major order
/// (intercept, slope) for each category.
pub const SIMULATION_TWO_FORMULA: &str = "y ~ 1 + v1 | 1 + v2 | 1 + v3 | 1 + v4";
pub const SIMULATION_TWO_TRUTH: [f64; 8] = [-1.5, 2.0, 1.0, -3.0, -3.0, -1.0, 1.5, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovariateLaw {
    Uniform { low: f64, high: f64 },
}

impl Default for CovariateLaw {
    fn default() -> Self {
        CovariateLaw::Uniform { low: 0.0, high: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub covariates: CovariateTable,
    pub response: CompositionMatrix,
}

/// Covariates are drawn first, column by column in formula order, then one
/// response per observation from the same stream.
pub fn simulate(
    spec: &FormulaSpec,
    coefficients: &[f64],
    n_obs: usize,
    law: CovariateLaw,
    seed: u64,
) -> Result<SimulatedData> {
    if coefficients.len() != spec.n_coefficients() {
        return Err(Error::Arity { expected: spec.n_coefficients(), found: coefficients.len() });
    }
    if n_obs == 0 {
        return Err(Error::Validation("number of observations must be positive".into()));
    }
    let CovariateLaw::Uniform { low, high } = law;
    if !(low < high && low.is_finite() && high.is_finite()) {
        return Err(Error::Validation(format!("invalid uniform range ({low}, {high})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = spec.covariate_names();
    let columns = names
        .iter()
        .map(|_| (0..n_obs).map(|_| rng.random_range(low..high)).collect())
        .collect();
    let covariates = if names.is_empty() {
        CovariateTable::empty(n_obs)
    } else {
        CovariateTable::new(names, columns)?
    };
    let a = build_design_matrix(spec, &covariates)?;
    let eta = a.matvec(coefficients)?;
    check_predictor(&eta)?;
    let c = spec.n_categories();
    let mut data = vec![0.0; c * n_obs];
    for (e, out) in eta.chunks_exact(c).zip(data.chunks_exact_mut(c)) {
        let alpha: Vec<f64> = e.iter().map(|v| v.exp()).collect();
        sample_dirichlet_into(&alpha, &mut rng, out);
    }
    Ok(SimulatedData { covariates, response: CompositionMatrix::from_column_major(c, data)? })
}
