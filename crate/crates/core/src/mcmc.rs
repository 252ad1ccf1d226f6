//! Random-walk Metropolis on the exact posterior, used as the reference
//! against which the Gaussian approximation is judged.
//!
//! Proposals are joint Gaussian steps `s · L z` where `L` starts as the
//! diagonal of the configured scales. During warmup `log s` follows a
//! Robbins-Monro recursion toward 25% acceptance and `L` is twice replaced by
//! the Cholesky factor of the empirical covariance of the recent warmup
//! draws. Everything is frozen once warmup ends.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fitter::{DirichletRegression, PosteriorFit};
use crate::linalg::{cholesky, lower_mul};
use crate::predict::quantile;

pub const TARGET_ACCEPTANCE: f64 = 0.25;

/// Unnormalised log density of an `R^d` target.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// `-∞` outside the support or where the density cannot be evaluated.
    fn log_density(&self, x: &[f64]) -> f64;
}

/// `−objective(x)`, with `−∞` where the predictor guard trips.
pub fn exact_log_posterior(model: &DirichletRegression, x: &[f64]) -> f64 {
    model.objective(x).map_or(f64::NEG_INFINITY, |f| -f)
}

impl LogDensity for DirichletRegression {
    fn dim(&self) -> usize {
        self.n_coefficients()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        exact_log_posterior(self, x)
    }
}

/// Multivariate normal given mean and Cholesky factor of the precision.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    precision_factor: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, precision: &DMatrix<f64>) -> Result<Self> {
        if precision.nrows() != mean.len() {
            return Err(Error::Shape("precision and mean disagree".into()));
        }
        Ok(Self { mean, precision_factor: cholesky(precision)? })
    }
}

impl LogDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        // ‖Lᵀ d‖² = dᵀ Q d
        let l = &self.precision_factor;
        let mut q = 0.0;
        for k in 0..d.len() {
            let v: f64 = (k..d.len()).map(|i| l[(i, k)] * d[i]).sum();
            q += v * v;
        }
        -0.5 * q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProposalScale {
    Scalar(f64),
    PerCoordinate(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub n_warmup: usize,
    pub thin: usize,
    pub n_chains: usize,
    /// Initial proposal standard deviation; adapted during warmup.
    pub proposal_scale: ProposalScale,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iterations: 1_000_000,
            n_warmup: 100_000,
            thin: 5,
            n_chains: 3,
            proposal_scale: ProposalScale::Scalar(0.1),
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_warmup >= self.n_iterations {
            return Err(Error::Validation(format!(
                "warmup ({}) must be shorter than the run ({})",
                self.n_warmup, self.n_iterations
            )));
        }
        if self.thin == 0 || self.n_chains == 0 {
            return Err(Error::Validation("thin and chain count must be at least 1".into()));
        }
        if self.kept_per_chain() < 2 {
            return Err(Error::Validation("fewer than two draws kept per chain".into()));
        }
        match &self.proposal_scale {
            ProposalScale::Scalar(s) if !(*s > 0.0 && s.is_finite()) => {
                Err(Error::Validation(format!("proposal scale must be positive, got {s}")))
            }
            ProposalScale::PerCoordinate(v) if v.len() != dim => {
                Err(Error::Shape(format!("{} proposal scales for {dim} coordinates", v.len())))
            }
            ProposalScale::PerCoordinate(v) if v.iter().any(|s| !(*s > 0.0 && s.is_finite())) => {
                Err(Error::Validation("proposal scales must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn kept_per_chain(&self) -> usize {
        self.n_iterations.saturating_sub(self.n_warmup) / self.thin.max(1)
    }

    fn scales(&self, dim: usize) -> Vec<f64> {
        match &self.proposal_scale {
            ProposalScale::Scalar(s) => vec![*s; dim],
            ProposalScale::PerCoordinate(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    /// Monte Carlo standard error of the mean, by batch means.
    pub mcse_mean: f64,
    /// Monte Carlo standard error of the variance, by batch means.
    pub mcse_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    /// Kept draws, chain by chain, each of length J.
    pub draws: Vec<Vec<f64>>,
    pub n_chains: usize,
    pub kept_per_chain: usize,
    /// Post-warmup acceptance fraction per chain.
    pub acceptance_rate: Vec<f64>,
    pub summaries: Vec<DrawSummary>,
    pub r_hat: Vec<f64>,
}

impl ChainOutput {
    pub fn dim(&self) -> usize {
        self.summaries.len()
    }

    pub fn chain(&self, k: usize) -> &[Vec<f64>] {
        &self.draws[k * self.kept_per_chain..(k + 1) * self.kept_per_chain]
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }
}

struct SingleChain {
    draws: Vec<Vec<f64>>,
    acceptance_rate: f64,
}

/// Runs `n_chains` independent chains concurrently; chain `k` uses stream
/// `k` of the seeded generator, so output does not depend on scheduling.
pub fn run_chains<T: LogDensity>(target: &T, config: &ChainConfig) -> Result<ChainOutput> {
    let dim = target.dim();
    config.validate(dim)?;
    let chains: Vec<SingleChain> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.n_chains)
            .map(|k| scope.spawn(move || run_single(target, config, k as u64)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    let kept = config.kept_per_chain();
    let acceptance_rate = chains.iter().map(|c| c.acceptance_rate).collect();
    let per_chain: Vec<&[Vec<f64>]> = chains.iter().map(|c| c.draws.as_slice()).collect();
    let r_hat = (0..dim).map(|j| split_r_hat(&per_chain, j)).collect();
    let draws: Vec<Vec<f64>> = chains.into_iter().flat_map(|c| c.draws).collect();
    let summaries = (0..dim)
        .map(|j| summarize(&draws.iter().map(|d| d[j]).collect::<Vec<_>>(), config.n_chains))
        .collect();
    Ok(ChainOutput { draws, n_chains: config.n_chains, kept_per_chain: kept, acceptance_rate, summaries, r_hat })
}

fn run_single<T: LogDensity>(target: &T, config: &ChainConfig, stream: u64) -> SingleChain {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut lp = target.log_density(&x);
    let mut factor = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(config.scales(dim)));
    let mut log_scale = 0.0f64;
    let refreshes = [config.n_warmup / 4, config.n_warmup / 2];
    let mut window = Moments::new(dim);

    let mut draws = Vec::with_capacity(config.kept_per_chain());
    let mut accepted_after_warmup = 0usize;
    let mut z = vec![0.0; dim];
    let mut proposal = vec![0.0; dim];
    for it in 0..config.n_iterations {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let step = lower_mul(&factor, &z);
        let s = log_scale.exp();
        for ((p, xi), st) in proposal.iter_mut().zip(&x).zip(&step) {
            *p = xi + s * st;
        }
        let lp_new = target.log_density(&proposal);
        let log_ratio = lp_new - lp;
        let u: f64 = rng.random();
        let accept = lp_new.is_finite() && (log_ratio >= 0.0 || u.ln() < log_ratio);
        if accept {
            x.copy_from_slice(&proposal);
            lp = lp_new;
        }

        if it < config.n_warmup {
            let a = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
            log_scale += (a - TARGET_ACCEPTANCE) / ((it + 1) as f64).powf(0.6);
            window.push(&x);
            if refreshes.contains(&(it + 1)) && window.count > dim + 1 {
                if let Ok(l) = cholesky(&window.covariance()) {
                    factor = l;
                    log_scale = (2.38 / (dim as f64).sqrt()).ln();
                }
                window = Moments::new(dim);
            }
        } else {
            if accept {
                accepted_after_warmup += 1;
            }
            if (it + 1 - config.n_warmup) % config.thin == 0 {
                draws.push(x.clone());
            }
        }
    }
    let post = (config.n_iterations - config.n_warmup) as f64;
    SingleChain { draws, acceptance_rate: accepted_after_warmup as f64 / post }
}

/// Running mean and scatter (Welford).
struct Moments {
    count: usize,
    mean: Vec<f64>,
    scatter: DMatrix<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], scatter: DMatrix::zeros(dim, dim) }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        for i in 0..x.len() {
            for j in 0..x.len() {
                self.scatter[(i, j)] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.scatter / (self.count as f64 - 1.0);
        c = (&c + c.transpose()) * 0.5;
        let jitter = 1e-10 * c.trace().max(f64::MIN_POSITIVE) / c.nrows() as f64;
        for i in 0..c.nrows() {
            c[(i, i)] += jitter;
        }
        c
    }
}

fn summarize(values: &[f64], n_batches_min: usize) -> DrawSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    DrawSummary {
        mean,
        sd: var.sqrt(),
        q025: quantile(&sorted, 0.025),
        q500: quantile(&sorted, 0.5),
        q975: quantile(&sorted, 0.975),
        mcse_mean: batch_means_se(values, n_batches_min),
        mcse_var: batch_means_se(&sq, n_batches_min),
    }
}

/// Standard error of the mean of an autocorrelated series: about `√n`
/// batches, never fewer than `min_batches`, never more than `n / 2`.
pub fn batch_means_se(values: &[f64], min_batches: usize) -> f64 {
    let n = values.len();
    let batches = ((n as f64).sqrt() as usize).max(min_batches).min(n / 2).max(2);
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = values.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let b = means.len() as f64;
    let grand = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1.0);
    (var / b).sqrt()
}

/// Split-chain potential scale reduction for coordinate `j`.
pub fn split_r_hat(chains: &[&[Vec<f64>]], j: usize) -> f64 {
    let halves: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [c[..h].iter().map(|d| d[j]).collect::<Vec<_>>(), c[c.len() - h..].iter().map(|d| d[j]).collect()]
        })
        .collect();
    let n = halves[0].len() as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientAgreement {
    /// `|m_gauss − m_mcmc| / sd_mcmc`.
    pub mean_delta: f64,
    /// `sd_gauss / sd_mcmc`.
    pub sd_ratio: f64,
    /// Kolmogorov–Smirnov distance between the draws and the Gaussian marginal.
    pub ks_statistic: f64,
}

pub fn agreement_metrics(fit: &PosteriorFit, chains: &ChainOutput) -> Result<Vec<CoefficientAgreement>> {
    if fit.n_coefficients() != chains.dim() {
        return Err(Error::Shape(format!(
            "fit has {} coefficients, chains have {}",
            fit.n_coefficients(),
            chains.dim()
        )));
    }
    (0..chains.dim())
        .map(|j| {
            let s = chains.summaries[j];
            let (m, sd) = (fit.posterior_mean[j], fit.marginal_sd[j]);
            Ok(CoefficientAgreement {
                mean_delta: (m - s.mean).abs() / s.sd,
                sd_ratio: sd / s.sd,
                ks_statistic: ks_statistic(&chains.coordinate(j), m, sd)?,
            })
        })
        .collect()
}

/// Two-sided KS distance between a sample and `N(mean, sd²)`.
pub fn ks_statistic(sample: &[f64], mean: f64, sd: f64) -> Result<f64> {
    let normal = Normal::new(mean, sd).map_err(|e| Error::Validation(format!("gaussian marginal: {e}")))?;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}
