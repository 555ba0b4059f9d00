//! Offline preparation shared by every strategy: index the repository,
//! enumerate candidates, materialize their columns and profile them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_strategy, Strategy};
use crate::discovery::{
    build_join_index, generate_candidates, Augmentation, CandidateColumns, JoinIndex, DEFAULT_CONTAINMENT_THRESHOLD,
    DEFAULT_MAX_HOPS, DEFAULT_SIGNATURE_SIZE,
};
use crate::error::{Error, Result};
use crate::profiles::{profile_candidates, ProfileRegistry, ProfileSession, ProfileVector, DEFAULT_PROFILES, DEFAULT_SAMPLE_SIZE};
use crate::repository::{Repository, Table};
use crate::search::{Problem, SearchConfig, Solution, SubsetOracle, TableOracle};
use crate::tasks::UtilityTask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub containment_threshold: f64,
    pub max_hops: usize,
    pub signature_size: usize,
    pub profiles: Vec<String>,
    /// Extra uninformative profiles appended to the registry.
    pub random_profiles: usize,
    pub sample_size: usize,
    pub profile_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            containment_threshold: DEFAULT_CONTAINMENT_THRESHOLD,
            max_hops: DEFAULT_MAX_HOPS,
            signature_size: DEFAULT_SIGNATURE_SIZE,
            profiles: DEFAULT_PROFILES.iter().map(|s| s.to_string()).collect(),
            random_profiles: 0,
            sample_size: DEFAULT_SAMPLE_SIZE,
            profile_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn registry(&self) -> Result<ProfileRegistry> {
        let mut reg = ProfileRegistry::from_names(&self.profiles)?.with_random(self.random_profiles)?;
        reg.sample_size = self.sample_size;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.containment_threshold > 0.0 && self.containment_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "containment threshold {} outside (0, 1]",
                self.containment_threshold
            )));
        }
        if self.signature_size == 0 {
            return Err(Error::InvalidConfig("signature size must be positive".into()));
        }
        Ok(())
    }
}

/// Wall-clock seconds per offline stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub index: f64,
    pub candidates: f64,
    pub materialize: f64,
    pub profile: f64,
}

/// Candidates of one input table, ready for search.
pub struct Prepared {
    pub augmentations: Vec<Augmentation>,
    pub ids: Vec<String>,
    pub columns: CandidateColumns,
    pub profiles: Vec<ProfileVector>,
    pub profile_names: Vec<String>,
    pub timings: StageTimings,
}

impl Prepared {
    pub fn overlap_dim(&self) -> Option<usize> {
        self.profile_names.iter().position(|n| n == "overlap")
    }

    pub fn problem<'a>(&'a self, oracle: &'a dyn SubsetOracle) -> Problem<'a> {
        Problem {
            ids: &self.ids,
            profiles: &self.profiles,
            oracle,
        }
    }

    pub fn oracle<'a>(&'a self, d_in: &'a Table, task: &'a dyn UtilityTask) -> TableOracle<'a> {
        TableOracle {
            base: d_in,
            columns: &self.columns,
            task,
        }
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Full offline phase, building the join index from scratch.
pub fn prepare(d_in: &Table, repo: &Repository, target: Option<&str>, config: &PipelineConfig) -> Result<Prepared> {
    config.validate()?;
    let t = Instant::now();
    let index = build_join_index(repo, config.signature_size);
    let index_secs = secs(t);
    let mut p = prepare_with_index(d_in, repo, &index, target, config)?;
    p.timings.index = index_secs;
    Ok(p)
}

/// Offline phase against a prebuilt join index.
pub fn prepare_with_index(
    d_in: &Table,
    repo: &Repository,
    index: &JoinIndex,
    target: Option<&str>,
    config: &PipelineConfig,
) -> Result<Prepared> {
    config.validate()?;
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let augmentations = generate_candidates(d_in, index, config.containment_threshold, config.max_hops);
    timings.candidates = secs(t);
    log::info!("{} candidate augmentations", augmentations.len());
    let t = Instant::now();
    let columns = CandidateColumns::build(d_in, repo, &augmentations)?;
    timings.materialize = secs(t);
    let t = Instant::now();
    let registry = config.registry()?;
    let session = ProfileSession::new(d_in, target, config.sample_size, config.profile_seed)?;
    let profiles = profile_candidates(&augmentations, &columns, repo, &registry, &session)?;
    timings.profile = secs(t);
    Ok(Prepared {
        ids: augmentations.iter().map(|a| a.id.clone()).collect(),
        augmentations,
        columns,
        profiles,
        profile_names: registry.names(),
        timings,
    })
}

/// Runs one strategy over prepared candidates.
pub fn run_prepared(
    strategy: Strategy,
    d_in: &Table,
    prepared: &Prepared,
    task: &dyn UtilityTask,
    config: &SearchConfig,
) -> Result<Solution> {
    let oracle = prepared.oracle(d_in, task);
    run_strategy(strategy, &prepared.problem(&oracle), prepared.overlap_dim(), config)
}
