//! Posterior mode search and the Gaussian posterior built from
//! pseudo-observations at the mode.
//!
//! The mode is found by damped Newton iteration on the exact negative
//! log-posterior, using per-observation Hessian blocks (exact where positive
//! definite, expected otherwise) and a backtracking Armijo line search. At
//! the mode the likelihood is replaced by unit-variance Gaussian
//! pseudo-observations `z̃₀ ~ N(L₀ᵀ A x, I)`, and with the Gaussian prior the
//! posterior of `x` is `N(m, Q_post⁻¹)` with
//! `Q_post = Aᵀ L₀ L₀ᵀ A + Q_x` and `Q_post m = Aᵀ L₀ z̃₀`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::compositional::CompositionMatrix;
use crate::criteria::ModelCriteria;
use crate::error::{Error, Result};
use crate::likelihood::{
    build_pseudo_observations, check_predictor, exact_hessian_raw, factor_expected, factor_with_fallback_raw,
    gradient_raw, neg_log_lik_raw, HessianKind, PseudoObservationSet,
};
use crate::linalg::{cholesky, cholesky_solve, inverse_diagonal, lower_mul, max_abs, solve_lower_transpose_in_place};
use crate::model::{DesignMatrix, PriorPrecision};

/// Below this predicted decrease (relative to `1 + |f|`) the Armijo test only
/// compares rounding noise, so the full Newton step is taken.
const ROUNDING_REGIME: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Prior precision τ on every coefficient.
    pub prior_precision: f64,
    pub max_iterations: usize,
    /// Stop when the ∞-norm of the objective gradient falls below this.
    pub gradient_tolerance: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    pub seed: u64,
    pub n_posterior_draws: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            prior_precision: 1e-4,
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            min_step: 1e-10,
            seed: 0,
            n_posterior_draws: 4000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("prior_precision", self.prior_precision),
            ("gradient_tolerance", self.gradient_tolerance),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 || self.n_posterior_draws < 2 {
            return Err(Error::Validation("need at least one iteration and two posterior draws".into()));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 0.5) {
            return Err(Error::Validation(format!("armijo_c1 must lie in (0, 0.5), got {}", self.armijo_c1)));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Validation(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    /// Accepted step length; 0 on the terminating record.
    pub step_length: f64,
    pub fallback_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub mode: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveDerivatives {
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    /// Observations whose exact Hessian block was replaced.
    pub fallback_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalQuantiles {
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

/// Gaussian approximation to the posterior of the stacked coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFit {
    pub mode: Vec<f64>,
    pub posterior_precision: DMatrix<f64>,
    pub posterior_mean: Vec<f64>,
    pub marginal_sd: Vec<f64>,
    pub quantiles: Vec<MarginalQuantiles>,
    pub iteration_trace: Vec<IterationRecord>,
    pub termination: Termination,
    /// Hessian blocks replaced by the expected Hessian at the mode.
    pub fallback_count: usize,
    pub criteria: Option<ModelCriteria>,
}

impl PosteriorFit {
    /// Cholesky factor of the posterior precision.
    pub fn precision_factor(&self) -> Result<DMatrix<f64>> {
        cholesky(&self.posterior_precision)
    }

    pub fn n_coefficients(&self) -> usize {
        self.posterior_mean.len()
    }

    /// `n` joint draws `m + L⁻ᵀ z` from the Gaussian posterior, seeded.
    pub fn draws(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let l = self.precision_factor()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = self.n_coefficients();
        Ok((0..n)
            .map(|_| {
                let mut z: Vec<f64> = (0..j).map(|_| rng.sample(StandardNormal)).collect();
                solve_lower_transpose_in_place(&l, &mut z);
                z.iter().zip(&self.posterior_mean).map(|(a, b)| a + b).collect()
            })
            .collect())
    }
}

/// Dirichlet regression posterior: responses, stacked design and a diagonal
/// Gaussian prior.
#[derive(Debug, Clone)]
pub struct DirichletRegression {
    y: CompositionMatrix,
    a: DesignMatrix,
    log_y: Vec<f64>,
    prior_diag: Vec<f64>,
}

impl DirichletRegression {
    pub fn new(y: CompositionMatrix, a: DesignMatrix, prior: &PriorPrecision) -> Result<Self> {
        if a.n_categories() != y.n_categories() || a.n_obs() != y.n_obs() {
            return Err(Error::Shape(format!(
                "design has {} categories x {} observations, response has {} x {}",
                a.n_categories(),
                a.n_obs(),
                y.n_categories(),
                y.n_obs()
            )));
        }
        let prior_diag = prior.diagonal(a.n_cols())?;
        let log_y = y.as_column_major().iter().map(|v| v.ln()).collect();
        Ok(Self { y, a, log_y, prior_diag })
    }

    pub fn response(&self) -> &CompositionMatrix {
        &self.y
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.a
    }

    pub fn prior_diagonal(&self) -> &[f64] {
        &self.prior_diag
    }

    pub fn n_coefficients(&self) -> usize {
        self.a.n_cols()
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_coefficients() {
            return Err(Error::Shape(format!("{} coefficients, expected {}", x.len(), self.n_coefficients())));
        }
        Ok(())
    }

    /// Per-observation log-likelihoods `log p(yₙ | η(x))`.
    pub fn observation_log_liks(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let eta = self.a.matvec(x)?;
        check_predictor(&eta)?;
        let c = self.y.n_categories();
        let mut alpha = vec![0.0; c];
        Ok(eta
            .chunks_exact(c)
            .zip(self.log_y.chunks_exact(c))
            .map(|(e, ly)| {
                for (a, e) in alpha.iter_mut().zip(e) {
                    *a = e.exp();
                }
                -neg_log_lik_raw(ly, &alpha)
            })
            .collect())
    }

    /// Negative log-likelihood of the whole data set at stacked predictor `eta`.
    pub(crate) fn neg_log_lik_at(&self, eta: &[f64]) -> f64 {
        let c = self.y.n_categories();
        let mut alpha = vec![0.0; c];
        let mut total = 0.0;
        for (e, ly) in eta.chunks_exact(c).zip(self.log_y.chunks_exact(c)) {
            for (a, e) in alpha.iter_mut().zip(e) {
                *a = e.exp();
            }
            total += neg_log_lik_raw(ly, &alpha);
        }
        total
    }

    /// Exact negative log-posterior `Σₙ l(yₙ | ηₙ) + ½ xᵀ Q_x x`, constants dropped.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        let eta = self.a.matvec(x)?;
        check_predictor(&eta)?;
        let prior: f64 = x.iter().zip(&self.prior_diag).map(|(v, t)| t * v * v).sum();
        Ok(self.neg_log_lik_at(&eta) + 0.5 * prior)
    }

    /// Gradient `Aᵀ g̃ + Q_x x` and Hessian `Aᵀ H̃ A + Q_x`, with each block of
    /// `H̃` exact when positive definite and expected otherwise.
    pub fn objective_derivatives(&self, x: &[f64]) -> Result<ObjectiveDerivatives> {
        self.derivatives(x, false)
    }

    /// As [`Self::objective_derivatives`] with every block replaced by the
    /// expected Hessian.
    pub fn objective_derivatives_expected(&self, x: &[f64]) -> Result<ObjectiveDerivatives> {
        self.derivatives(x, true)
    }

    fn derivatives(&self, x: &[f64], force_expected: bool) -> Result<ObjectiveDerivatives> {
        self.check_len(x)?;
        let eta = self.a.matvec(x)?;
        check_predictor(&eta)?;
        let c = self.y.n_categories();
        let j = self.n_coefficients();
        let mut gradient: Vec<f64> = x.iter().zip(&self.prior_diag).map(|(v, t)| t * v).collect();
        let mut hessian = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.prior_diag));
        let mut fallback_count = 0;
        for (n, (e, ly)) in eta.chunks_exact(c).zip(self.log_y.chunks_exact(c)).enumerate() {
            let alpha: Vec<f64> = e.iter().map(|v| v.exp()).collect();
            let g = gradient_raw(ly, &alpha);
            let block = if force_expected {
                factor_expected(&alpha)?.hessian
            } else {
                let f = factor_with_fallback_raw(ly, &alpha)?;
                if f.kind == HessianKind::Expected {
                    fallback_count += 1;
                }
                f.hessian
            };
            for ci in 0..c {
                let ri = n * c + ci;
                for (ji, ai) in self.a.row(ri) {
                    gradient[ji] += ai * g[ci];
                    for cj in 0..c {
                        let h = block[(ci, cj)];
                        if h == 0.0 {
                            continue;
                        }
                        for (jj, aj) in self.a.row(n * c + cj) {
                            hessian[(ji, jj)] += ai * h * aj;
                        }
                    }
                }
            }
        }
        debug_assert_eq!(hessian.nrows(), j);
        Ok(ObjectiveDerivatives { gradient, hessian, fallback_count })
    }

    /// Exact Hessian of the objective without any block substitution; may be
    /// indefinite away from the mode.
    pub fn exact_objective_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(x)?;
        let eta = self.a.matvec(x)?;
        check_predictor(&eta)?;
        let c = self.y.n_categories();
        let mut hessian = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.prior_diag));
        for (n, (e, ly)) in eta.chunks_exact(c).zip(self.log_y.chunks_exact(c)).enumerate() {
            let alpha: Vec<f64> = e.iter().map(|v| v.exp()).collect();
            let block = exact_hessian_raw(ly, &alpha);
            for ci in 0..c {
                for (ji, ai) in self.a.row(n * c + ci) {
                    for cj in 0..c {
                        for (jj, aj) in self.a.row(n * c + cj) {
                            hessian[(ji, jj)] += ai * block[(ci, cj)] * aj;
                        }
                    }
                }
            }
        }
        Ok(hessian)
    }

    /// Damped Newton iteration from `x = 0`.
    pub fn posterior_mode(&self, config: &FitConfig) -> Result<ModeResult> {
        config.validate()?;
        let mut x = vec![0.0; self.n_coefficients()];
        let mut trace = Vec::new();
        let mut f = self.objective(&x)?;
        for iteration in 0..config.max_iterations {
            let mut d = self.objective_derivatives(&x)?;
            let gradient_norm = max_abs(&d.gradient);
            if gradient_norm <= config.gradient_tolerance {
                trace.push(IterationRecord {
                    iteration,
                    objective: f,
                    gradient_norm,
                    step_length: 0.0,
                    fallback_count: d.fallback_count,
                });
                return Ok(ModeResult { mode: x, trace, termination: Termination::GradientTolerance });
            }
            let mut direction = newton_direction(&d);
            let mut slope = dot(&d.gradient, direction.as_deref().unwrap_or(&[]));
            if direction.is_none() || !(slope < 0.0) {
                d = self.objective_derivatives_expected(&x)?;
                d.fallback_count = self.y.n_obs();
                direction = newton_direction(&d);
                slope = dot(&d.gradient, direction.as_deref().unwrap_or(&[]));
                if direction.is_none() || !(slope < 0.0) {
                    return Err(Error::Validation(format!(
                        "no descent direction at iteration {iteration} even with the expected Hessian"
                    )));
                }
            }
            let direction = direction.expect("checked above");

            let mut step = 1.0;
            let accepted = if -slope <= ROUNDING_REGIME * (1.0 + f.abs()) {
                let trial = axpy(&x, step, &direction);
                Some((trial.clone(), self.objective(&trial).unwrap_or(f)))
            } else {
                loop {
                    let trial = axpy(&x, step, &direction);
                    let f_trial = self.objective(&trial).unwrap_or(f64::INFINITY);
                    if f_trial <= f + config.armijo_c1 * step * slope {
                        break Some((trial, f_trial));
                    }
                    step *= config.backtrack_factor;
                    if step < config.min_step {
                        break None;
                    }
                }
            };
            match accepted {
                Some((trial, f_trial)) => {
                    trace.push(IterationRecord {
                        iteration,
                        objective: f,
                        gradient_norm,
                        step_length: step,
                        fallback_count: d.fallback_count,
                    });
                    x = trial;
                    f = f_trial;
                }
                None => {
                    trace.push(IterationRecord {
                        iteration,
                        objective: f,
                        gradient_norm,
                        step_length: 0.0,
                        fallback_count: d.fallback_count,
                    });
                    return Ok(ModeResult { mode: x, trace, termination: Termination::StepUnderflow });
                }
            }
        }
        Err(Error::NonConvergence { iterations: config.max_iterations, trace })
    }

    /// Pseudo-observations at `η₀ = A x₀`.
    pub fn pseudo_observations_at(&self, x0: &[f64]) -> Result<PseudoObservationSet> {
        self.check_len(x0)?;
        let eta0 = self.a.matvec(x0)?;
        build_pseudo_observations(&self.y, &eta0, false)
    }

    /// Conjugate Gaussian posterior given pseudo-observations at `x0`.
    pub fn gaussian_posterior(&self, x0: &[f64], trace: Vec<IterationRecord>, termination: Termination) -> Result<PosteriorFit> {
        let pseudo = self.pseudo_observations_at(x0)?;
        let c = self.y.n_categories();
        let j = self.n_coefficients();
        let mut precision = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.prior_diag));
        let mut rhs = vec![0.0; j];
        let mut b = DMatrix::<f64>::zeros(c, j);
        for n in 0..self.y.n_obs() {
            let l = &pseudo.cholesky_blocks[n];
            // B = L₀ₙᵀ Aₙ, so Aₙᵀ L₀ₙ L₀ₙᵀ Aₙ = Bᵀ B
            b.fill(0.0);
            for ci in 0..c {
                for (col, v) in self.a.row(n * c + ci) {
                    for k in 0..=ci {
                        b[(k, col)] += l[(ci, k)] * v;
                    }
                }
            }
            precision += b.transpose() * &b;
            let lz = lower_mul(l, &pseudo.z0[n * c..(n + 1) * c]);
            for (ci, w) in lz.iter().enumerate() {
                for (col, v) in self.a.row(n * c + ci) {
                    rhs[col] += v * w;
                }
            }
        }
        let precision = (&precision + precision.transpose()) * 0.5;
        let factor = cholesky(&precision)
            .map_err(|e| Error::NotPositiveDefinite(format!("posterior precision: {e}")))?;
        let mean = cholesky_solve(&factor, &rhs);
        let residual = &precision * nalgebra::DVector::from_column_slice(&mean) - nalgebra::DVector::from_column_slice(&rhs);
        if residual.amax() > 1e-8 * max_abs(&rhs).max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite(format!(
                "posterior mean solve residual {:e} too large",
                residual.amax()
            )));
        }
        let marginal_sd: Vec<f64> = inverse_diagonal(&factor).into_iter().map(f64::sqrt).collect();
        let quantiles = gaussian_quantiles(&mean, &marginal_sd);
        Ok(PosteriorFit {
            mode: x0.to_vec(),
            posterior_precision: precision,
            posterior_mean: mean,
            marginal_sd,
            quantiles,
            iteration_trace: trace,
            termination,
            fallback_count: pseudo.fallback_count,
            criteria: None,
        })
    }

    /// Mode search, Gaussian posterior and model criteria.
    pub fn fit(&self, config: &FitConfig) -> Result<PosteriorFit> {
        let mut fit = self.fit_without_criteria(config)?;
        fit.criteria = Some(crate::criteria::model_criteria(self, &fit, config.n_posterior_draws, config.seed)?);
        Ok(fit)
    }

    pub fn fit_without_criteria(&self, config: &FitConfig) -> Result<PosteriorFit> {
        let mode = self.posterior_mode(config)?;
        self.gaussian_posterior(&mode.mode, mode.trace, mode.termination)
    }
}

fn newton_direction(d: &ObjectiveDerivatives) -> Option<Vec<f64>> {
    let l = cholesky(&d.hessian).ok()?;
    let neg: Vec<f64> = d.gradient.iter().map(|g| -g).collect();
    Some(cholesky_solve(&l, &neg))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], s: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + s * b).collect()
}

pub(crate) fn gaussian_quantiles(mean: &[f64], sd: &[f64]) -> Vec<MarginalQuantiles> {
    let z = Normal::standard().inverse_cdf(0.975);
    mean.iter()
        .zip(sd)
        .map(|(&m, &s)| MarginalQuantiles { q025: m - z * s, q500: m, q975: m + z * s })
        .collect()
}
