use std::path::PathBuf;

use metam::bench::SynthSpec;
use metam::{PipelineConfig, SearchConfig, TaskConfig};
use serde::{Deserialize, Serialize};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to repeat a `run`, written before the first query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub strategy: String,
    pub seed: u64,
    pub repo: PathBuf,
    pub repo_hash: String,
    pub input: PathBuf,
    pub input_hash: String,
    pub task: TaskConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub search: SearchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub tool_version: String,
    pub spec: SynthSpec,
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
    pub search: SearchConfig,
}

/// Ground truth and threshold of a generated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub spec: SynthSpec,
    pub theta: f64,
    pub planted_utility: f64,
    pub ground_truth: Vec<String>,
    pub repo_hash: String,
    pub input_hash: String,
}
