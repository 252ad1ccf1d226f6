use std::path::PathBuf;
use std::time::Instant;

use dirlaplace::fitter::FitConfig;
use dirlaplace::mcmc::ChainConfig;
use serde::{Deserialize, Serialize};

use crate::commands::Invocation;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command, plus how long each stage took.
/// Replaying `invocation` reproduces every other artifact exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub invocation: Invocation,
    pub formula: Option<String>,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub fit_config: Option<FitConfig>,
    pub chain_config: Option<ChainConfig>,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Default)]
pub struct Stopwatch {
    pub stages: Vec<StageTiming>,
}

impl Stopwatch {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(StageTiming { stage: stage.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }
}
