#![allow(dead_code)]

use dirlaplace::compositional::CompositionMatrix;
use dirlaplace::fitter::DirichletRegression;
use dirlaplace::model::{build_design_matrix, CovariateTable, FormulaSpec, PriorPrecision};
use dirlaplace::simulate::{simulate, CovariateLaw};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn simulated_model(formula: &str, truth: &[f64], n_obs: usize, seed: u64, tau: f64) -> DirichletRegression {
    let spec = FormulaSpec::parse(formula, 4).unwrap();
    let data = simulate(&spec, truth, n_obs, CovariateLaw::default(), seed).unwrap();
    let a = build_design_matrix(&spec, &data.covariates).unwrap();
    DirichletRegression::new(data.response, a, &PriorPrecision::Scalar(tau)).unwrap()
}

pub fn intercept_model(rows: &[Vec<f64>], tau: f64) -> DirichletRegression {
    let c = rows[0].len();
    let spec = FormulaSpec::parse(&format!("y ~ {}", vec!["1"; c].join(" | ")), c).unwrap();
    let a = build_design_matrix(&spec, &CovariateTable::empty(rows.len())).unwrap();
    DirichletRegression::new(CompositionMatrix::from_rows(rows).unwrap(), a, &PriorPrecision::Scalar(tau)).unwrap()
}

/// A uniform point on the open simplex, kept away from the faces.
pub fn random_composition(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}
