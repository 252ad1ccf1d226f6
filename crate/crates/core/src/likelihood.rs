//! Dirichlet negative log-likelihood in linear-predictor space and the
//! Gaussian pseudo-observations built from its second-order expansion.
//!
//! With `α_c = exp(η_c)` and `α₀ = Σ α_c`,
//!
//! ```text
//! l(y | η)    = −ln Γ(α₀) + Σ ln Γ(α_c) − Σ (α_c − 1) ln y_c
//! ∂l/∂η_c     = α_c [ψ(α_c) − ψ(α₀)] − α_c ln y_c
//! ∂²l/∂η_c²   = α_c [ψ(α_c) − ψ(α₀)] + α_c² [ψ′(α_c) − ψ′(α₀)] − α_c ln y_c
//! ∂²l/∂η_c∂η_d = −α_c α_d ψ′(α₀)
//! ```
//!
//! The expected Hessian drops the terms whose expectation cancels,
//! `E[ln y_c] = ψ(α_c) − ψ(α₀)`.

use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compositional::CompositionMatrix;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, lower_transpose_mul, solve_lower_in_place};
use crate::special::{digamma, ln_gamma, trigamma};

/// `|η|` above this would overflow `exp` in the shape parameters.
pub const ETA_LIMIT: f64 = 700.0;

/// Diagonal jitter, relative to `trace / C`, tried once when even the
/// expected Hessian fails to factor.
const JITTER_RELATIVE: f64 = 1e-8;

/// Linear predictor of a single observation (log of the shape vector).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorBlock(Vec<f64>);

impl PredictorBlock {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        check_predictor(&eta)?;
        Ok(Self(eta))
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.0.iter().map(|e| e.exp()).collect()
    }
}

impl Deref for PredictorBlock {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_predictor(eta: &[f64]) -> Result<()> {
    match eta.iter().find(|e| !(e.abs() <= ETA_LIMIT)) {
        Some(&value) => Err(Error::NumericRange { value, limit: ETA_LIMIT }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HessianKind {
    Exact,
    Expected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationDerivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub hessian_kind: HessianKind,
}

/// `l` from precomputed shapes and log-compositions.
#[inline]
pub(crate) fn neg_log_lik_raw(log_y: &[f64], alpha: &[f64]) -> f64 {
    let mut alpha0 = 0.0;
    let mut value = 0.0;
    for (&a, &ly) in alpha.iter().zip(log_y) {
        alpha0 += a;
        value += ln_gamma(a) - (a - 1.0) * ly;
    }
    value - ln_gamma(alpha0)
}

pub fn neg_log_lik(y: &[f64], eta: &PredictorBlock) -> f64 {
    let log_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    neg_log_lik_raw(&log_y, &eta.alpha())
}

pub fn gradient(y: &[f64], eta: &PredictorBlock) -> Vec<f64> {
    let alpha = eta.alpha();
    let psi0 = digamma(alpha.iter().sum());
    alpha.iter().zip(y).map(|(&a, &v)| a * (digamma(a) - psi0) - a * v.ln()).collect()
}

pub fn hessian(y: &[f64], eta: &PredictorBlock) -> DMatrix<f64> {
    let log_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    exact_hessian_raw(&log_y, &eta.alpha())
}

pub(crate) fn exact_hessian_raw(log_y: &[f64], alpha: &[f64]) -> DMatrix<f64> {
    let alpha0: f64 = alpha.iter().sum();
    let (psi0, tri0) = (digamma(alpha0), trigamma(alpha0));
    let mut h = off_diagonal(alpha, tri0);
    for (c, (&a, &ly)) in alpha.iter().zip(log_y).enumerate() {
        h[(c, c)] = a * (digamma(a) - psi0) + a * a * (trigamma(a) - tri0) - a * ly;
    }
    h
}

pub fn expected_hessian(eta: &PredictorBlock) -> DMatrix<f64> {
    expected_hessian_raw(&eta.alpha())
}

pub(crate) fn expected_hessian_raw(alpha: &[f64]) -> DMatrix<f64> {
    let tri0 = trigamma(alpha.iter().sum());
    let mut h = off_diagonal(alpha, tri0);
    for (c, &a) in alpha.iter().enumerate() {
        h[(c, c)] = a * a * (trigamma(a) - tri0);
    }
    h
}

fn off_diagonal(alpha: &[f64], tri0: f64) -> DMatrix<f64> {
    let c = alpha.len();
    DMatrix::from_fn(c, c, |i, j| if i == j { 0.0 } else { -alpha[i] * alpha[j] * tri0 })
}

pub(crate) fn gradient_raw(log_y: &[f64], alpha: &[f64]) -> Vec<f64> {
    let psi0 = digamma(alpha.iter().sum());
    alpha.iter().zip(log_y).map(|(&a, &ly)| a * (digamma(a) - psi0 - ly)).collect()
}

pub fn observation_derivatives(y: &[f64], eta: &PredictorBlock, kind: HessianKind) -> ObservationDerivatives {
    let log_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let alpha = eta.alpha();
    let hessian = match kind {
        HessianKind::Exact => exact_hessian_raw(&log_y, &alpha),
        HessianKind::Expected => expected_hessian_raw(&alpha),
    };
    ObservationDerivatives {
        value: neg_log_lik_raw(&log_y, &alpha),
        gradient: gradient_raw(&log_y, &alpha),
        hessian,
        hessian_kind: kind,
    }
}

/// Cholesky factor of one observation's Hessian block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFactor {
    pub lower: DMatrix<f64>,
    /// The matrix that was factored (including any jitter).
    pub hessian: DMatrix<f64>,
    pub kind: HessianKind,
    pub jittered: bool,
}

pub(crate) fn factor_expected(alpha: &[f64]) -> Result<BlockFactor> {
    let h = expected_hessian_raw(alpha);
    if let Ok(lower) = cholesky(&h) {
        return Ok(BlockFactor { lower, hessian: h, kind: HessianKind::Expected, jittered: false });
    }
    let c = alpha.len();
    let jitter = JITTER_RELATIVE * h.trace() / c as f64;
    let h = h + DMatrix::identity(c, c) * jitter;
    let lower = cholesky(&h)?;
    Ok(BlockFactor { lower, hessian: h, kind: HessianKind::Expected, jittered: true })
}

pub(crate) fn factor_with_fallback_raw(log_y: &[f64], alpha: &[f64]) -> Result<BlockFactor> {
    let h = exact_hessian_raw(log_y, alpha);
    match cholesky(&h) {
        Ok(lower) => Ok(BlockFactor { lower, hessian: h, kind: HessianKind::Exact, jittered: false }),
        Err(_) => factor_expected(alpha),
    }
}

/// Factors the exact Hessian, falling back to the expected Hessian when the
/// exact one is not positive definite.
pub fn block_cholesky_with_fallback(y: &[f64], eta: &PredictorBlock) -> Result<BlockFactor> {
    let log_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    factor_with_fallback_raw(&log_y, &eta.alpha())
}

/// Per-observation Gaussian pseudo-data `z₀ₙ = L₀ₙᵀ η₀ₙ − L₀ₙ⁻¹ g₀ₙ`, under
/// which `l(yₙ | ηₙ) ≈ constₙ + ½ ‖z₀ₙ − L₀ₙᵀ ηₙ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservationSet {
    pub n_categories: usize,
    /// Linearization point, stacked like `z0`.
    pub eta0: Vec<f64>,
    pub z0: Vec<f64>,
    pub cholesky_blocks: Vec<DMatrix<f64>>,
    pub hessian_blocks: Vec<DMatrix<f64>>,
    pub gradient: Vec<f64>,
    /// `l(yₙ | η₀ₙ)` per observation.
    pub values: Vec<f64>,
    pub kinds: Vec<HessianKind>,
    pub fallback_count: usize,
}

impl PseudoObservationSet {
    pub fn n_obs(&self) -> usize {
        self.cholesky_blocks.len()
    }

    fn span(&self, n: usize) -> std::ops::Range<usize> {
        n * self.n_categories..(n + 1) * self.n_categories
    }

    /// `l(yₙ | η₀ₙ) − ½ g₀ₙᵀ H₀ₙ⁻¹ g₀ₙ`.
    pub fn constant(&self, n: usize) -> f64 {
        let mut w = self.gradient[self.span(n)].to_vec();
        solve_lower_in_place(&self.cholesky_blocks[n], &mut w);
        self.values[n] - 0.5 * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// `Σₙ constₙ + ½ ‖z₀ₙ − L₀ₙᵀ ηₙ‖²` at an arbitrary stacked predictor.
    pub fn quadratic_value(&self, eta: &[f64]) -> f64 {
        (0..self.n_obs())
            .map(|n| {
                let s = self.span(n);
                let fitted = lower_transpose_mul(&self.cholesky_blocks[n], &eta[s.clone()]);
                let r2: f64 = self.z0[s].iter().zip(&fitted).map(|(z, f)| (z - f).powi(2)).sum();
                self.constant(n) + 0.5 * r2
            })
            .sum()
    }

    /// Gradient of [`Self::quadratic_value`]: `−L₀ₙ (z₀ₙ − L₀ₙᵀ ηₙ)` per block.
    pub fn quadratic_gradient(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(eta.len());
        for n in 0..self.n_obs() {
            let s = self.span(n);
            let l = &self.cholesky_blocks[n];
            let fitted = lower_transpose_mul(l, &eta[s.clone()]);
            let resid: Vec<f64> = self.z0[s].iter().zip(&fitted).map(|(z, f)| z - f).collect();
            out.extend(crate::linalg::lower_mul(l, &resid).into_iter().map(|v| -v));
        }
        out
    }
}

/// `Lᵀ η − L⁻¹ g` by one triangular solve.
pub(crate) fn pseudo_block(lower: &DMatrix<f64>, eta: &[f64], g: &[f64]) -> Vec<f64> {
    let mut w = g.to_vec();
    solve_lower_in_place(lower, &mut w);
    let lt_eta = lower_transpose_mul(lower, eta);
    lt_eta.iter().zip(&w).map(|(a, b)| a - b).collect()
}

/// Builds pseudo-observations at the stacked predictor `eta_tilde`.
pub fn pseudo_observations(y: &CompositionMatrix, eta_tilde: &[f64]) -> Result<PseudoObservationSet> {
    build_pseudo_observations(y, eta_tilde, false)
}

pub(crate) fn build_pseudo_observations(
    y: &CompositionMatrix,
    eta_tilde: &[f64],
    force_expected: bool,
) -> Result<PseudoObservationSet> {
    let c = y.n_categories();
    if eta_tilde.len() != c * y.n_obs() {
        return Err(Error::Shape(format!("predictor of length {} for {} x {}", eta_tilde.len(), c, y.n_obs())));
    }
    check_predictor(eta_tilde)?;
    let n_obs = y.n_obs();
    let mut set = PseudoObservationSet {
        n_categories: c,
        eta0: eta_tilde.to_vec(),
        z0: Vec::with_capacity(c * n_obs),
        cholesky_blocks: Vec::with_capacity(n_obs),
        hessian_blocks: Vec::with_capacity(n_obs),
        gradient: Vec::with_capacity(c * n_obs),
        values: Vec::with_capacity(n_obs),
        kinds: Vec::with_capacity(n_obs),
        fallback_count: 0,
    };
    for (n, (col, eta)) in y.columns().zip(eta_tilde.chunks_exact(c)).enumerate() {
        let log_y: Vec<f64> = col.iter().map(|v| v.ln()).collect();
        let alpha: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let g = gradient_raw(&log_y, &alpha);
        let factor = if force_expected {
            factor_expected(&alpha)
        } else {
            factor_with_fallback_raw(&log_y, &alpha)
        }
        .map_err(|e| Error::NotPositiveDefinite(format!("observation {n}: {e}")))?;
        if factor.kind == HessianKind::Expected {
            set.fallback_count += 1;
        }
        set.z0.extend(pseudo_block(&factor.lower, eta, &g));
        set.values.push(neg_log_lik_raw(&log_y, &alpha));
        set.gradient.extend(g);
        set.kinds.push(factor.kind);
        set.cholesky_blocks.push(factor.lower);
        set.hessian_blocks.push(factor.hessian);
    }
    Ok(set)
}
