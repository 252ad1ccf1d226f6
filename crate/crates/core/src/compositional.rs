//! Dirichlet fundamentals on the open simplex: validated compositions,
//! density, moments, seeded sampling and the zero/one compression transform.

use std::ops::Deref;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::special::ln_gamma;

/// Unit-sum tolerance for user-supplied data (CSV round trips add noise).
pub const INPUT_SIMPLEX_TOL: f64 = 1e-8;
/// Unit-sum tolerance for data generated inside the crate.
pub const INTERNAL_SIMPLEX_TOL: f64 = 1e-12;

fn check_column(values: &[f64], column: usize, tol: f64) -> Result<()> {
    for (row, &v) in values.iter().enumerate() {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Domain(format!(
                "entry {v} at row {row}, column {column} is not in the open interval (0, 1)"
            )));
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Simplex { column, sum });
    }
    Ok(())
}

/// A single point on the open simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition(Vec<f64>);

impl Composition {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Shape("a composition needs at least two parts".into()));
        }
        check_column(&values, 0, INPUT_SIMPLEX_TOL)?;
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Composition {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// C × N response matrix, one composition per column, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    n_categories: usize,
    n_obs: usize,
    data: Vec<f64>,
}

impl CompositionMatrix {
    /// Builds from column-major storage, validating every column.
    pub fn from_column_major(n_categories: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(n_categories, data, INPUT_SIMPLEX_TOL)
    }

    /// Builds from one observation per row, the tabular layout of CSV input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_categories = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(n_categories * rows.len());
        for (n, row) in rows.iter().enumerate() {
            if row.len() != n_categories {
                return Err(Error::Shape(format!(
                    "row {n} has {} entries, expected {n_categories}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_column_major(n_categories, data)
    }

    fn with_tolerance(n_categories: usize, data: Vec<f64>, tol: f64) -> Result<Self> {
        if n_categories < 2 {
            return Err(Error::Shape("need at least two categories".into()));
        }
        if data.is_empty() || data.len() % n_categories != 0 {
            return Err(Error::Shape(format!(
                "{} values cannot form columns of length {n_categories}",
                data.len()
            )));
        }
        let n_obs = data.len() / n_categories;
        for (n, col) in data.chunks_exact(n_categories).enumerate() {
            check_column(col, n, tol)?;
        }
        Ok(Self { n_categories, n_obs, data })
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn column(&self, n: usize) -> &[f64] {
        &self.data[n * self.n_categories..(n + 1) * self.n_categories]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_categories)
    }

    pub fn as_column_major(&self) -> &[f64] {
        &self.data
    }

    /// Entry for category `c` of observation `n`.
    pub fn get(&self, c: usize, n: usize) -> f64 {
        self.data[n * self.n_categories + c]
    }
}

/// Shape vector of a Dirichlet distribution together with its sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Shape("Dirichlet needs at least two shape parameters".into()));
        }
        if let Some(bad) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Domain(format!("shape parameter {bad} is not positive and finite")));
        }
        let alpha0 = alpha.iter().sum();
        Ok(Self { alpha, alpha0 })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

/// Maps data on the closed simplex into its interior with
/// `y* = (y (N − 1) + 1/C) / N`.
///
/// `data` is column-major, `n_cat` rows by `n_obs` columns.
pub fn transform_to_open_interval(data: &[f64], n_obs: usize, n_cat: usize) -> Result<CompositionMatrix> {
    if n_cat < 2 || n_obs == 0 || data.len() != n_obs * n_cat {
        return Err(Error::Shape(format!(
            "expected {n_cat} x {n_obs} = {} values, got {}",
            n_obs * n_cat,
            data.len()
        )));
    }
    for (n, col) in data.chunks_exact(n_cat).enumerate() {
        for (c, &v) in col.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("entry {v} at row {c}, column {n} is outside [0, 1]")));
            }
        }
        let sum: f64 = col.iter().sum();
        if (sum - 1.0).abs() > INPUT_SIMPLEX_TOL {
            return Err(Error::Simplex { column: n, sum });
        }
    }
    let nf = n_obs as f64;
    let shift = 1.0 / n_cat as f64;
    let mut out: Vec<f64> = data.iter().map(|&v| (v * (nf - 1.0) + shift) / nf).collect();
    // The largest entry absorbs the rounding so every column sums to one;
    // for two categories this makes T(y) + T(1 − y) = 1 exactly.
    for col in out.chunks_exact_mut(n_cat) {
        let top = (0..n_cat)
            .max_by(|&i, &j| col[i].total_cmp(&col[j]).then(j.cmp(&i)))
            .unwrap_or(0);
        let rest: f64 = col.iter().enumerate().filter(|(i, _)| *i != top).map(|(_, v)| v).sum();
        col[top] = 1.0 - rest;
    }
    CompositionMatrix::from_column_major(n_cat, out)
}

/// True when some entry sits on the boundary of the simplex, i.e. the
/// compression transform is needed before fitting.
pub fn needs_open_interval_transform(data: &[f64]) -> bool {
    data.iter().any(|&v| v <= 0.0 || v >= 1.0)
}

/// `log p(y | α)` for the Dirichlet density.
pub fn log_density(y: &[f64], params: &DirichletParams) -> Result<f64> {
    if y.len() != params.len() {
        return Err(Error::Shape(format!("composition has {} parts, α has {}", y.len(), params.len())));
    }
    if let Some(bad) = y.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain(format!("composition entry {bad} is not in (0, 1)")));
    }
    let mut value = ln_gamma(params.alpha0);
    for (&a, &v) in params.alpha.iter().zip(y) {
        value += (a - 1.0) * v.ln() - ln_gamma(a);
    }
    Ok(value)
}

pub fn moments(params: &DirichletParams) -> DirichletMoments {
    let a0 = params.alpha0;
    let denom = a0 * a0 * (a0 + 1.0);
    let c = params.len();
    let mean = params.alpha.iter().map(|a| a / a0).collect();
    let covariance = DMatrix::from_fn(c, c, |i, j| {
        let (ai, aj) = (params.alpha[i], params.alpha[j]);
        if i == j {
            ai * (a0 - ai) / denom
        } else {
            -ai * aj / denom
        }
    });
    let variance = covariance.diagonal().iter().copied().collect();
    DirichletMoments { mean, variance, covariance }
}

/// Draws `ln G` for `G ~ Gamma(shape, 1)`.
///
/// Marsaglia–Tsang squeeze for shape ≥ 1; below that the boosting identity
/// `G(a) = G(a + 1) U^{1/a}` is applied on the log scale so that very small
/// shapes do not underflow.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random::<f64>();
        // random() is in [0, 1); use 1 − u to stay away from ln 0
        return ln_gamma_variate(shape + 1.0, rng) + (1.0 - u).ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

/// One Dirichlet draw written into `out`, normalized on the log scale.
///
/// Entries are clamped to `[f64::MIN_POSITIVE, 1 − ε/2]` so the result stays
/// strictly inside the simplex when some shapes are tiny.
pub fn sample_dirichlet_into<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R, out: &mut [f64]) {
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = ln_gamma_variate(a, rng);
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = (*o / sum).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    }
}

/// `n` independent draws from `Dirichlet(α)`, deterministic in `seed`.
pub fn sample_dirichlet(params: &DirichletParams, n: usize, seed: u64) -> Result<CompositionMatrix> {
    if n == 0 {
        return Err(Error::Validation("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = params.len();
    let mut data = vec![0.0; c * n];
    for col in data.chunks_exact_mut(c) {
        sample_dirichlet_into(&params.alpha, &mut rng, col);
    }
    CompositionMatrix::with_tolerance(c, data, INTERNAL_SIMPLEX_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(a: &[f64]) -> DirichletParams {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    #[test]
    fn transform_examples() {
        let out = transform_to_open_interval(&[0.0, 1.0], 1, 2);
        // N = 1 collapses everything onto 1/C
        assert_abs_diff_eq!(out.unwrap().get(0, 0), 0.5);

        let mut data = vec![0.5; 20];
        data[0] = 0.0;
        data[1] = 1.0;
        let out = transform_to_open_interval(&data, 10, 2).unwrap();
        assert_abs_diff_eq!(out.get(1, 0), 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(out.get(0, 0), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(out.column(0).iter().sum::<f64>(), 1.0, epsilon = 1e-15);

        let mut data = vec![0.25; 4 * 92];
        data[..4].copy_from_slice(&[0.0, 0.5, 0.5, 0.0]);
        let out = transform_to_open_interval(&data, 92, 4).unwrap();
        assert_abs_diff_eq!(out.get(0, 0), 0.25 / 92.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.get(0, 0), 0.00271739, epsilon = 1e-8);
    }

    #[test]
    fn transform_errors() {
        match transform_to_open_interval(&[1.2, -0.2], 1, 2) {
            Err(Error::Domain(msg)) => assert!(msg.contains("row 0, column 0")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            transform_to_open_interval(&[0.3, 0.6], 1, 2),
            Err(Error::Simplex { column: 0, .. })
        ));
        assert!(matches!(transform_to_open_interval(&[0.5, 0.5], 2, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn log_density_examples() {
        assert_abs_diff_eq!(log_density(&[0.3, 0.7], &params(&[1.0, 1.0])).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            log_density(&[0.1, 0.2, 0.3, 0.4], &params(&[1.0; 4])).unwrap(),
            6f64.ln(),
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            log_density(&[0.5, 0.5], &params(&[2.0, 2.0])).unwrap(),
            1.5f64.ln(),
            epsilon = 1e-13
        );
        assert!(matches!(log_density(&[0.0, 1.0], &params(&[1.0, 1.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn moment_examples() {
        let m = moments(&params(&[1.0; 4]));
        for c in 0..4 {
            assert_abs_diff_eq!(m.mean[c], 0.25, epsilon = 1e-15);
            assert_abs_diff_eq!(m.variance[c], 3.0 / 80.0, epsilon = 1e-15);
            for d in 0..4 {
                if c != d {
                    assert_abs_diff_eq!(m.covariance[(c, d)], -1.0 / 80.0, epsilon = 1e-15);
                }
            }
        }
        let m = moments(&params(&[2.0, 2.0]));
        assert_abs_diff_eq!(m.variance[0], 0.05, epsilon = 1e-15);
        let m = moments(&params(&[1.0, 2.0, 3.0]));
        assert_abs_diff_eq!(m.mean[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.variance[0], 5.0 / 252.0, epsilon = 1e-15);
    }

    #[test]
    fn moments_match_monte_carlo() {
        let p = params(&[1.0, 2.0, 3.0]);
        let n = 1_000_000;
        let draws = sample_dirichlet(&p, n, 17).unwrap();
        let m = moments(&p);
        for c in 0..3 {
            let xs: Vec<f64> = draws.columns().map(|col| col[c]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let fourth = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
            let mean_se = (var / n as f64).sqrt();
            let var_se = ((fourth - var * var) / n as f64).sqrt();
            assert!((mean - m.mean[c]).abs() < 3.0 * mean_se, "category {c} mean");
            assert!((var - m.variance[c]).abs() < 3.0 * var_se, "category {c} variance");
        }
    }

    #[test]
    fn sampling_contracts() {
        let p = params(&[1.0; 4]);
        let draws = sample_dirichlet(&p, 100_000, 3).unwrap();
        for c in 0..4 {
            let mean = draws.columns().map(|col| col[c]).sum::<f64>() / 100_000.0;
            assert!((mean - 0.25).abs() < 0.005);
        }
        let one = sample_dirichlet(&params(&[0.05, 3.0, 40.0]), 1, 9).unwrap();
        assert_abs_diff_eq!(one.column(0).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(sample_dirichlet(&p, 50, 11).unwrap(), sample_dirichlet(&p, 50, 11).unwrap());
        assert_ne!(sample_dirichlet(&p, 50, 11).unwrap(), sample_dirichlet(&p, 50, 12).unwrap());
    }

    #[test]
    fn tiny_shapes_stay_interior() {
        let p = params(&[0.01, 0.02, 5.0]);
        let draws = sample_dirichlet(&p, 10_000, 5).unwrap();
        assert!(draws.as_column_major().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn composition_validation() {
        assert!(Composition::new(vec![0.2, 0.8 + 1e-9]).is_ok());
        assert!(Composition::new(vec![0.2, 0.81]).is_err());
        assert!(Composition::new(vec![1.0]).is_err());
        assert!(CompositionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.3, 0.5]]).is_err());
        assert!(DirichletParams::new(vec![1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn log_density_matches_direct_summation(
            alpha in prop::collection::vec(0.05f64..50.0, 2..7),
            raw in prop::collection::vec(0.01f64..1.0, 7),
        ) {
            let c = alpha.len();
            let s: f64 = raw[..c].iter().sum();
            let y: Vec<f64> = raw[..c].iter().map(|v| v / s).collect();
            let p = DirichletParams::new(alpha.clone()).unwrap();
            // B(α) as a product of Γ ratios through f64 gamma is too coarse;
            // sum log-gammas term by term in a different order instead
            let a0: f64 = alpha.iter().rev().sum();
            let mut direct = 0.0;
            for c in (0..c).rev() {
                direct += (alpha[c] - 1.0) * y[c].ln();
                direct -= ln_gamma(alpha[c]);
            }
            direct += ln_gamma(a0);
            let got = log_density(&y, &p).unwrap();
            prop_assert!((got - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }

        #[test]
        fn transform_is_affine_and_symmetric(y in 0.0f64..=1.0, n in 2usize..1000) {
            let mut data = vec![0.5; 2 * n];
            data[0] = y;
            data[1] = 1.0 - y;
            let out = transform_to_open_interval(&data, n, 2).unwrap();
            let (a, b) = (out.get(0, 0), out.get(1, 0));
            prop_assert!(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0);
            prop_assert_eq!(a + b, 1.0);
        }

        #[test]
        fn covariance_rows_cancel(alpha in prop::collection::vec(0.05f64..100.0, 2..8)) {
            let p = DirichletParams::new(alpha.clone()).unwrap();
            let m = moments(&p);
            let a0 = p.alpha0();
            for c in 0..alpha.len() {
                let row: f64 = m.covariance.row(c).iter().sum();
                prop_assert!(row.abs() < 1e-10);
                prop_assert!((m.covariance[(c, c)] - m.covariance[(c, c)]).abs() == 0.0);
                // marginal Beta(α_c, α₀ − α_c) variance
                let (a, b) = (alpha[c], a0 - alpha[c]);
                let beta_var = a * b / ((a + b).powi(2) * (a + b + 1.0));
                prop_assert!((m.variance[c] - beta_var).abs() <= 1e-14 * beta_var.max(1e-300) + 1e-300);
            }
        }
    }
}
