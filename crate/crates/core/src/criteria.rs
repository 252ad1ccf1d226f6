//! DIC, WAIC and LCPO estimated from draws of the Gaussian posterior.
//!
//! Each criterion comes with a Monte Carlo standard error from its
//! first-order influence function over draws, so callers can judge whether a
//! difference between runs is sampling noise.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fitter::{DirichletRegression, PosteriorFit};

/// Per-observation `var_s log p` above which WAIC is flagged as unreliable.
pub const WAIC_VARIANCE_WARNING: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCriteria {
    pub dic: f64,
    pub waic: f64,
    pub lcpo: f64,
    pub dic_se: f64,
    pub waic_se: f64,
    pub lcpo_se: f64,
    /// Effective number of parameters, `mean(D) − D(m)`.
    pub p_dic: f64,
    /// `Σₙ var_s log p(yₙ | x_s)`.
    pub p_waic: f64,
    pub n_draws: usize,
    /// Set when some observation's log-likelihood variance is non-finite or
    /// above [`WAIC_VARIANCE_WARNING`].
    pub waic_warning: bool,
}

pub fn model_criteria(model: &DirichletRegression, fit: &PosteriorFit, n_draws: usize, seed: u64) -> Result<ModelCriteria> {
    let draws = fit.draws(n_draws, seed)?;
    let log_liks: Vec<Vec<f64>> = draws
        .iter()
        .map(|x| model.observation_log_liks(x))
        .collect::<Result<_>>()?;
    let at_mean = model.observation_log_liks(&fit.posterior_mean)?;
    Ok(criteria_from_log_liks(&log_liks, &at_mean))
}

/// Criteria from a draws × observations table of log-likelihoods and the
/// log-likelihoods at the posterior mean.
pub fn criteria_from_log_liks(log_liks: &[Vec<f64>], at_mean: &[f64]) -> ModelCriteria {
    let s = log_liks.len();
    let n = at_mean.len();
    let sf = s as f64;

    let deviance: Vec<f64> = log_liks.iter().map(|row| -2.0 * row.iter().sum::<f64>()).collect();
    let mean_dev = mean(&deviance);
    let dev_at_mean = -2.0 * at_mean.iter().sum::<f64>();
    let dic = 2.0 * mean_dev - dev_at_mean;
    let dic_infl: Vec<f64> = deviance.iter().map(|d| 2.0 * (d - mean_dev)).collect();

    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut lcpo_sum = 0.0;
    let mut waic_warning = false;
    let mut waic_infl = vec![0.0; s];
    let mut lcpo_infl = vec![0.0; s];
    let mut column = vec![0.0; s];
    for obs in 0..n {
        for (c, row) in column.iter_mut().zip(log_liks) {
            *c = row[obs];
        }
        let log_mean_p = log_mean_exp(column.iter().copied());
        let log_mean_q = log_mean_exp(column.iter().map(|v| -v));
        let l_bar = mean(&column);
        let v = column.iter().map(|l| (l - l_bar).powi(2)).sum::<f64>() / (sf - 1.0).max(1.0);
        if !v.is_finite() || v > WAIC_VARIANCE_WARNING {
            waic_warning = true;
        }
        lppd += log_mean_p;
        p_waic += v;
        lcpo_sum += log_mean_q;
        for (k, &l) in column.iter().enumerate() {
            waic_infl[k] += -2.0 * (((l - log_mean_p).exp() - 1.0) - ((l - l_bar).powi(2) - v));
            lcpo_infl[k] += ((-l - log_mean_q).exp() - 1.0) / n as f64;
        }
    }

    ModelCriteria {
        dic,
        waic: -2.0 * (lppd - p_waic),
        lcpo: lcpo_sum / n as f64,
        dic_se: standard_error(&dic_infl),
        waic_se: standard_error(&waic_infl),
        lcpo_se: standard_error(&lcpo_infl),
        p_dic: mean_dev - dev_at_mean,
        p_waic,
        n_draws: s,
        waic_warning,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn log_mean_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (max, count) = values.clone().fold((f64::NEG_INFINITY, 0usize), |(m, c), v| (m.max(v), c + 1));
    if !max.is_finite() {
        return max;
    }
    max + (values.map(|v| (v - max).exp()).sum::<f64>() / count as f64).ln()
}

/// Standard error of a mean of influence values centred at zero.
fn standard_error(influence: &[f64]) -> f64 {
    let s = influence.len() as f64;
    if s < 2.0 {
        return f64::NAN;
    }
    let m = mean(influence);
    (influence.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s - 1.0) / s).sqrt()
}
