//! Plain-text summary of a fit, one coefficient table per category.

use std::fmt::Write;

use crate::fitter::PosteriorFit;
use crate::model::FormulaSpec;

const RULE: &str = "=======================================================================";
const THIN_RULE: &str = "-----------------------------------------------------------------------";

/// The `mode` column repeats the mean: the marginals are Gaussian.
pub fn summary(spec: &FormulaSpec, fit: &PosteriorFit, n_obs: usize, transformed: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Call: {spec}");
    if transformed {
        let _ = writeln!(out, "Responses containing 0 or 1 were moved into the open simplex.");
    }
    let _ = writeln!(out, "\n---- FIXED EFFECTS ----\n{RULE}");
    for c in 0..spec.n_categories() {
        let _ = writeln!(out, "Category {}\n{THIN_RULE}", c + 1);
        let width = spec.per_category_terms[c].iter().map(|t| t.label().len()).max().unwrap_or(0).max(9);
        let _ = writeln!(
            out,
            "{:width$} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "", "mean", "sd", "0.025quant", "0.5quant", "0.975quant", "mode"
        );
        let offset = spec.category_offset(c);
        for (k, term) in spec.per_category_terms[c].iter().enumerate() {
            let j = offset + k;
            let q = fit.quantiles[j];
            let _ = writeln!(
                out,
                "{:width$} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                term.label(),
                fit.posterior_mean[j],
                fit.marginal_sd[j],
                q.q025,
                q.q500,
                q.q975,
                fit.posterior_mean[j]
            );
        }
        let _ = writeln!(out, "{RULE}");
    }
    if let Some(cr) = &fit.criteria {
        let _ = writeln!(out, "\nDIC = {:.4} , WAIC = {:.4} , LCPO = {:.4}", cr.dic, cr.waic, cr.lcpo);
        if cr.waic_warning {
            let _ = writeln!(out, "Warning: some observations have log-likelihood variance above 0.4; WAIC may be unreliable.");
        }
    }
    let _ = writeln!(out, "Number of observations: {n_obs}");
    let _ = writeln!(out, "Number of Categories: {}", spec.n_categories());
    out
}

/// `y<c>:<term>` for every coefficient, in stacked order.
pub fn coefficient_labels(spec: &FormulaSpec) -> Vec<String> {
    spec.per_category_terms
        .iter()
        .enumerate()
        .flat_map(|(c, terms)| terms.iter().map(move |t| format!("y{}:{}", c + 1, t.label())))
        .collect()
}
