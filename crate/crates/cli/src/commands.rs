use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dirlaplace::fitter::{DirichletRegression, FitConfig, PosteriorFit};
use dirlaplace::mcmc::{agreement_metrics, run_chains, ChainConfig, ChainOutput, ProposalScale};
use dirlaplace::model::{build_design_matrix, FormulaSpec, PriorPrecision};
use dirlaplace::predict::{predict, PredictiveResult, Summary};
use dirlaplace::report::{coefficient_labels, summary};
use dirlaplace::simulate::{simulate, CovariateLaw};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Normal};

use crate::failure::{Failure, Outcome};
use crate::io::{read_covariates, read_dataset, read_json, write_dataset, write_json, write_rows, write_text};
use crate::manifest::{RunManifest, StageTiming, Stopwatch, MANIFEST_FILE};

pub const FIT_SCHEMA_VERSION: u32 = 1;
const PLOT_POINTS: usize = 101;
const HISTOGRAM_BINS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct FitOptions {
    /// Prior precision of every coefficient.
    #[arg(long, default_value_t = 1e-4)]
    pub prec: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Gradient ∞-norm at which the mode search stops.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Posterior draws for the model criteria.
    #[arg(long, default_value_t = 4000)]
    pub draws: usize,
}

impl FitOptions {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            prior_precision: self.prec,
            max_iterations: self.max_iter,
            gradient_tolerance: self.tol,
            seed: self.seed,
            n_posterior_draws: self.draws,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub formula: String,
    /// Comma-separated coefficients, category by category.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub coefficients: Vec<f64>,
    /// Number of observations.
    #[arg(long)]
    pub n: usize,
    /// Covariates are drawn uniformly on (low, high).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub low: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub high: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub formula: String,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct PredictArgs {
    /// A fit.json written by `fit` or `compare`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Covariate rows to predict at.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub formula: String,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 100_000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl CompareArgs {
    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            n_iterations: self.iters,
            n_warmup: self.warmup,
            thin: self.thin,
            n_chains: self.chains,
            proposal_scale: ProposalScale::Scalar(0.1),
            seed: self.fit.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Simulate(SimulateArgs),
    Fit(FitArgs),
    Predict(PredictArgs),
    Compare(CompareArgs),
}

impl Invocation {
    pub fn out(&self) -> &Path {
        match self {
            Invocation::Simulate(a) => &a.out,
            Invocation::Fit(a) => &a.out,
            Invocation::Predict(a) => &a.out,
            Invocation::Compare(a) => &a.out,
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Invocation::Simulate(a) => a.out = out,
            Invocation::Fit(a) => a.out = out,
            Invocation::Predict(a) => a.out = out,
            Invocation::Compare(a) => a.out = out,
        }
    }

    pub fn run(&self) -> Outcome<()> {
        fs::create_dir_all(self.out()).map_err(|e| Failure::Io(format!("{}: {e}", self.out().display())))?;
        match self {
            Invocation::Simulate(a) => run_simulate(a, self),
            Invocation::Fit(a) => run_fit(a, self),
            Invocation::Predict(a) => run_predict(a, self),
            Invocation::Compare(a) => run_compare(a, self),
        }
    }
}

/// Machine-readable fit, enough to predict without the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub formula: String,
    pub n_categories: usize,
    pub n_obs: usize,
    pub covariate_names: Vec<String>,
    pub coefficient_labels: Vec<String>,
    pub transformed: bool,
    pub config: FitConfig,
    pub fit: PosteriorFit,
}

impl FitArtifact {
    pub fn spec(&self) -> Outcome<FormulaSpec> {
        Ok(FormulaSpec::parse(&self.formula, self.n_categories)?)
    }
}

#[derive(Debug, Serialize)]
struct PlotRow<'a> {
    coefficient: &'a str,
    method: &'a str,
    x: f64,
    density: f64,
}

#[derive(Debug, Serialize)]
struct TimingRow<'a> {
    stage: &'a str,
    seconds: f64,
}

fn write_manifest(
    inv: &Invocation,
    formula: Option<&str>,
    inputs: Vec<PathBuf>,
    fit_config: Option<FitConfig>,
    chain_config: Option<ChainConfig>,
    seed: u64,
    timings: Vec<StageTiming>,
) -> Outcome<()> {
    let out = inv.out();
    write_rows(&out.join("timing.csv"), timings.iter().map(|t| TimingRow { stage: &t.stage, seconds: t.seconds }))?;
    let manifest = RunManifest {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: inv.clone(),
        formula: formula.map(str::to_string),
        inputs,
        output_dir: out.to_path_buf(),
        fit_config,
        chain_config,
        seed,
        timings,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

fn run_simulate(a: &SimulateArgs, inv: &Invocation) -> Outcome<()> {
    let n_cat = count_categories(&a.formula)?;
    let spec = FormulaSpec::parse(&a.formula, n_cat)?;
    let mut clock = Stopwatch::default();
    let data = clock.time("simulate", || {
        simulate(&spec, &a.coefficients, a.n, CovariateLaw::Uniform { low: a.low, high: a.high }, a.seed)
    })?;
    write_dataset(&a.out.join("data.csv"), &data.response, &data.covariates)?;
    println!("wrote {} observations of {} categories to {}", a.n, n_cat, a.out.join("data.csv").display());
    write_manifest(inv, Some(&a.formula), vec![], None, None, a.seed, clock.stages)
}

/// Categories are the `|`-separated blocks on the right of `~`.
fn count_categories(formula: &str) -> Outcome<usize> {
    let rhs = formula
        .split_once('~')
        .map(|(_, r)| r)
        .ok_or_else(|| Failure::Validation(format!("formula `{formula}` has no `~`")))?;
    Ok(rhs.split('|').count())
}

struct Fitted {
    spec: FormulaSpec,
    model: DirichletRegression,
    artifact: FitArtifact,
}

fn fit_dataset(formula: &str, data_path: &Path, options: &FitOptions, clock: &mut Stopwatch, out: &Path) -> Outcome<Fitted> {
    let data = clock.time("load", || read_dataset(data_path))?;
    let spec = FormulaSpec::parse(formula, data.response.n_categories())?;
    let a = build_design_matrix(&spec, &data.covariates)?;
    let config = options.config();
    config.validate()?;
    let model = DirichletRegression::new(data.response.clone(), a, &PriorPrecision::Scalar(config.prior_precision))?;
    let fit = match clock.time("laplace_fit", || model.fit_without_criteria(&config)) {
        Ok(fit) => fit,
        Err(dirlaplace::Error::NonConvergence { iterations, trace }) => {
            eprintln!("iteration,objective,gradient_norm,step_length,fallback_count");
            for r in &trace {
                eprintln!("{},{},{},{},{}", r.iteration, r.objective, r.gradient_norm, r.step_length, r.fallback_count);
            }
            write_rows(&out.join("trace.csv"), &trace)?;
            return Err(Failure::NonConvergence(format!(
                "mode search did not converge in {iterations} iterations; trace written to {}",
                out.join("trace.csv").display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let criteria = clock.time("criteria", || {
        dirlaplace::criteria::model_criteria(&model, &fit, config.n_posterior_draws, config.seed)
    })?;
    let fit = PosteriorFit { criteria: Some(criteria), ..fit };
    let artifact = FitArtifact {
        schema_version: FIT_SCHEMA_VERSION,
        formula: spec.to_string(),
        n_categories: spec.n_categories(),
        n_obs: data.response.n_obs(),
        covariate_names: spec.covariate_names(),
        coefficient_labels: coefficient_labels(&spec),
        transformed: data.transformed,
        config,
        fit,
    };
    Ok(Fitted { spec, model, artifact })
}

fn report_fit(fitted: &Fitted, out: &Path) -> Outcome<()> {
    let a = &fitted.artifact;
    let text = summary(&fitted.spec, &a.fit, a.n_obs, a.transformed);
    print!("{text}");
    write_text(&out.join("summary.txt"), &text)?;
    write_json(&out.join("fit.json"), a)
}

fn laplace_curves<'a>(labels: &'a [String], fit: &PosteriorFit) -> Vec<PlotRow<'a>> {
    let mut rows = Vec::new();
    for (j, label) in labels.iter().enumerate() {
        let (m, s) = (fit.posterior_mean[j], fit.marginal_sd[j]);
        let normal = Normal::new(m, s).expect("positive marginal sd");
        for k in 0..PLOT_POINTS {
            let x = m - 4.0 * s + 8.0 * s * k as f64 / (PLOT_POINTS - 1) as f64;
            rows.push(PlotRow { coefficient: label, method: "laplace", x, density: normal.pdf(x) });
        }
    }
    rows
}

fn histograms<'a>(labels: &'a [String], chains: &ChainOutput) -> Vec<PlotRow<'a>> {
    let mut rows = Vec::new();
    for (j, label) in labels.iter().enumerate() {
        let values = chains.coordinate(j);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / HISTOGRAM_BINS as f64).max(f64::MIN_POSITIVE);
        let mut counts = [0usize; HISTOGRAM_BINS];
        for v in &values {
            counts[(((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            rows.push(PlotRow {
                coefficient: label,
                method: "mcmc",
                x: lo + (b as f64 + 0.5) * width,
                density: *c as f64 / (values.len() as f64 * width),
            });
        }
    }
    rows
}

fn run_fit(a: &FitArgs, inv: &Invocation) -> Outcome<()> {
    let mut clock = Stopwatch::default();
    let fitted = fit_dataset(&a.formula, &a.data, &a.fit, &mut clock, &a.out)?;
    if fitted.artifact.transformed {
        eprintln!("note: responses contained 0 or 1 and were compressed into the open simplex");
    }
    report_fit(&fitted, &a.out)?;
    write_rows(&a.out.join("plot_data.csv"), laplace_curves(&fitted.artifact.coefficient_labels, &fitted.artifact.fit))?;
    write_manifest(
        inv,
        Some(&a.formula),
        vec![a.data.clone()],
        Some(fitted.artifact.config.clone()),
        None,
        a.fit.seed,
        clock.stages,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionArtifact {
    pub schema_version: u32,
    pub formula: String,
    pub prediction: PredictiveResult,
}

#[derive(Debug, Serialize)]
struct PredictionRow {
    row: usize,
    category: String,
    quantity: &'static str,
    mean: f64,
    sd: f64,
    q025: f64,
    q500: f64,
    q975: f64,
}

impl PredictionRow {
    fn new(row: usize, category: String, quantity: &'static str, s: &Summary) -> Self {
        Self { row, category, quantity, mean: s.mean, sd: s.sd, q025: s.q025, q500: s.q500, q975: s.q975 }
    }
}

fn run_predict(a: &PredictArgs, inv: &Invocation) -> Outcome<()> {
    let mut clock = Stopwatch::default();
    let artifact: FitArtifact = clock.time("load", || read_json(&a.fit))?;
    if artifact.schema_version != FIT_SCHEMA_VERSION {
        return Err(Failure::Validation(format!(
            "fit schema version {} is not supported (expected {FIT_SCHEMA_VERSION})",
            artifact.schema_version
        )));
    }
    let spec = artifact.spec()?;
    let covariates = read_covariates(&a.data)?;
    let prediction = clock.time("predict", || predict(&artifact.fit, &spec, &covariates, a.draws, a.seed))?;

    let mut rows = Vec::new();
    println!("{:>4} {:>9} {:>12} {:>12} {:>12} {:>12}", "row", "category", "alpha_median", "alpha_q025", "alpha_q975", "mean_comp");
    for (n, r) in prediction.rows.iter().enumerate() {
        for (c, cat) in r.categories.iter().enumerate() {
            let name = format!("y{}", c + 1);
            println!(
                "{:>4} {:>9} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
                n + 1,
                name,
                cat.alpha.q500,
                cat.alpha.q025,
                cat.alpha.q975,
                cat.mean_composition.mean
            );
            rows.push(PredictionRow::new(n + 1, name.clone(), "eta", &cat.eta));
            rows.push(PredictionRow::new(n + 1, name.clone(), "alpha", &cat.alpha));
            rows.push(PredictionRow::new(n + 1, name, "mean", &cat.mean_composition));
        }
        rows.push(PredictionRow::new(n + 1, "all".into(), "precision", &r.precision));
    }
    write_rows(&a.out.join("prediction.csv"), rows)?;
    write_json(
        &a.out.join("prediction.json"),
        &PredictionArtifact { schema_version: FIT_SCHEMA_VERSION, formula: artifact.formula.clone(), prediction },
    )?;
    write_manifest(
        inv,
        Some(&artifact.formula),
        vec![a.fit.clone(), a.data.clone()],
        Some(artifact.config.clone()),
        None,
        a.seed,
        clock.stages,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientComparison {
    pub coefficient: String,
    pub laplace_mean: f64,
    pub laplace_sd: f64,
    pub mcmc_mean: f64,
    pub mcmc_sd: f64,
    pub mean_delta: f64,
    pub sd_ratio: f64,
    pub ks_statistic: f64,
    pub r_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementArtifact {
    pub schema_version: u32,
    pub formula: String,
    pub kept_draws: usize,
    pub acceptance_rate: Vec<f64>,
    pub coefficients: Vec<CoefficientComparison>,
}

fn run_compare(a: &CompareArgs, inv: &Invocation) -> Outcome<()> {
    let mut clock = Stopwatch::default();
    let fitted = fit_dataset(&a.formula, &a.data, &a.fit, &mut clock, &a.out)?;
    let chain_config = a.chain_config();
    let chains = clock.time("oracle", || run_chains(&fitted.model, &chain_config))?;
    let metrics = agreement_metrics(&fitted.artifact.fit, &chains)?;
    report_fit(&fitted, &a.out)?;

    let labels = &fitted.artifact.coefficient_labels;
    let fit = &fitted.artifact.fit;
    let coefficients: Vec<CoefficientComparison> = metrics
        .iter()
        .enumerate()
        .map(|(j, m)| CoefficientComparison {
            coefficient: labels[j].clone(),
            laplace_mean: fit.posterior_mean[j],
            laplace_sd: fit.marginal_sd[j],
            mcmc_mean: chains.summaries[j].mean,
            mcmc_sd: chains.summaries[j].sd,
            mean_delta: m.mean_delta,
            sd_ratio: m.sd_ratio,
            ks_statistic: m.ks_statistic,
            r_hat: chains.r_hat[j],
        })
        .collect();
    println!("\n{:<16} {:>10} {:>10} {:>10} {:>8}", "coefficient", "mean_delta", "sd_ratio", "ks", "r_hat");
    for c in &coefficients {
        println!("{:<16} {:>10.4} {:>10.4} {:>10.4} {:>8.4}", c.coefficient, c.mean_delta, c.sd_ratio, c.ks_statistic, c.r_hat);
    }
    for t in &clock.stages {
        println!("{:<16} {:>10.3} s", t.stage, t.seconds);
    }
    write_json(
        &a.out.join("agreement.json"),
        &AgreementArtifact {
            schema_version: FIT_SCHEMA_VERSION,
            formula: fitted.artifact.formula.clone(),
            kept_draws: chains.draws.len(),
            acceptance_rate: chains.acceptance_rate.clone(),
            coefficients,
        },
    )?;
    let mut plot = laplace_curves(labels, fit);
    plot.extend(histograms(labels, &chains));
    write_rows(&a.out.join("plot_data.csv"), plot)?;
    write_draws(&a.out.join("draws.csv"), labels, &chains)?;
    write_manifest(
        inv,
        Some(&a.formula),
        vec![a.data.clone()],
        Some(fitted.artifact.config.clone()),
        Some(chain_config),
        a.fit.seed,
        clock.stages,
    )
}

fn write_draws(path: &Path, labels: &[String], chains: &ChainOutput) -> Outcome<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["chain".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for k in 0..chains.n_chains {
        for d in chains.chain(k) {
            let mut row = vec![(k + 1).to_string()];
            row.extend(d.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn replay(manifest: &Path, out: Option<PathBuf>) -> Outcome<()> {
    let m: RunManifest = read_json(manifest)?;
    let mut inv = m.invocation;
    if let Some(out) = out {
        inv.set_out(out);
    }
    inv.run()
}
