//! Posterior predictive summaries for new covariate rows.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fitter::PosteriorFit;
use crate::linalg::solve_lower_in_place;
use crate::model::{build_design_matrix, CovariateTable, DesignMatrix, FormulaSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPrediction {
    /// Gaussian marginal of the linear predictor.
    pub eta: Summary,
    /// Lognormal marginal of `α = exp(η)`; `q500` is the median.
    pub alpha: Summary,
    /// Sampled `α_c / α₀`.
    pub mean_composition: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowPrediction {
    pub categories: Vec<CategoryPrediction>,
    /// Sampled precision `α₀`.
    pub precision: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveResult {
    pub rows: Vec<RowPrediction>,
    pub n_draws: usize,
    pub seed: u64,
}

pub fn predict(
    fit: &PosteriorFit,
    spec: &FormulaSpec,
    new_covariates: &CovariateTable,
    n_draws: usize,
    seed: u64,
) -> Result<PredictiveResult> {
    let a = build_design_matrix(spec, new_covariates)?;
    predict_design(fit, &a, n_draws, seed)
}

pub fn predict_design(fit: &PosteriorFit, a: &DesignMatrix, n_draws: usize, seed: u64) -> Result<PredictiveResult> {
    if a.n_cols() != fit.n_coefficients() {
        return Err(Error::Shape(format!("design has {} columns, fit has {}", a.n_cols(), fit.n_coefficients())));
    }
    if n_draws < 2 {
        return Err(Error::Validation("at least two predictive draws are needed".into()));
    }
    let l = fit.precision_factor()?;
    let z = Normal::standard().inverse_cdf(0.975);
    let c = a.n_categories();
    let sampled = composition_draws(fit, a, n_draws, seed)?;

    let mut rows = Vec::with_capacity(a.n_obs());
    for n in 0..a.n_obs() {
        let mut categories = Vec::with_capacity(c);
        for ci in 0..c {
            let mut w = vec![0.0; fit.n_coefficients()];
            let mut mu = 0.0;
            for (j, v) in a.row(n * c + ci) {
                w[j] = v;
                mu += v * fit.posterior_mean[j];
            }
            // aᵀ Q⁻¹ a = ‖L⁻¹ a‖²
            solve_lower_in_place(&l, &mut w);
            let sd = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let var = sd * sd;
            let eta = Summary { mean: mu, sd, q025: mu - z * sd, q500: mu, q975: mu + z * sd };
            let alpha = Summary {
                mean: (mu + 0.5 * var).exp(),
                sd: ((var.exp() - 1.0) * (2.0 * mu + var).exp()).sqrt(),
                q025: (mu - z * sd).exp(),
                q500: mu.exp(),
                q975: (mu + z * sd).exp(),
            };
            let column: Vec<f64> = sampled.iter().map(|d| d.compositions[n][ci]).collect();
            categories.push(CategoryPrediction { eta, alpha, mean_composition: empirical_summary(column) });
        }
        let precision = empirical_summary(sampled.iter().map(|d| d.precisions[n]).collect());
        rows.push(RowPrediction { categories, precision });
    }
    Ok(PredictiveResult { rows, n_draws, seed })
}

/// Per joint draw: the mean composition and precision of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraw {
    pub compositions: Vec<Vec<f64>>,
    pub precisions: Vec<f64>,
}

pub fn composition_draws(fit: &PosteriorFit, a: &DesignMatrix, n_draws: usize, seed: u64) -> Result<Vec<PredictiveDraw>> {
    let c = a.n_categories();
    let mut eta = vec![0.0; a.n_rows()];
    fit.draws(n_draws, seed)?
        .iter()
        .map(|x| {
            a.matvec_into(x, &mut eta);
            let mut compositions = Vec::with_capacity(a.n_obs());
            let mut precisions = Vec::with_capacity(a.n_obs());
            for e in eta.chunks_exact(c) {
                let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let scaled: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = scaled.iter().sum();
                compositions.push(scaled.iter().map(|v| v / total).collect());
                precisions.push(max.exp() * total);
            }
            Ok(PredictiveDraw { compositions, precisions })
        })
        .collect()
}

fn empirical_summary(mut values: Vec<f64>) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    values.sort_by(f64::total_cmp);
    Summary { mean, sd, q025: quantile(&values, 0.025), q500: quantile(&values, 0.5), q975: quantile(&values, 0.975) }
}

/// Linear interpolation between order statistics of sorted data.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
