//! Adaptive interventional search over candidate augmentations.
//!
//! Every strategy talks to the task through a [`QueryEngine`], which
//! memoizes subset utilities, logs each real evaluation, enforces the query
//! and time budgets, and certifies the accepted-utility trajectory as
//! non-decreasing.

mod engine;
mod metam;
mod minimal;

pub use engine::{Halt, QueryEngine};
pub use metam::{identify_group, run_metam, GroupSampler};
pub use minimal::{brute_force_best, brute_force_optimal, identify_minimal, BRUTE_FORCE_LIMIT};

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::discovery::CandidateColumns;
use crate::error::{Error, Result};
use crate::repository::Table;
use crate::tasks::UtilityTask;

pub const DEFAULT_MAX_QUERIES: usize = 1000;
pub const DEFAULT_HOMOGENEITY_MIN_SIZE: usize = 4;
pub const DEFAULT_RESAMPLE_LIMIT: usize = 32;

/// Utility of the input table augmented with a candidate subset. Subsets
/// arrive sorted, so implementations are set functions.
pub trait SubsetOracle {
    fn evaluate(&self, subset: &[usize]) -> Result<f64>;
}

/// Oracle from a closure, for synthetic utilities.
pub struct FnOracle<F>(pub F);

impl<F: Fn(&[usize]) -> Result<f64>> SubsetOracle for FnOracle<F> {
    fn evaluate(&self, subset: &[usize]) -> Result<f64> {
        (self.0)(subset)
    }
}

/// Materializes Γ(base, subset) from precomputed candidate columns and
/// runs the task on it.
pub struct TableOracle<'a> {
    pub base: &'a Table,
    pub columns: &'a CandidateColumns,
    pub task: &'a dyn UtilityTask,
}

impl SubsetOracle for TableOracle<'_> {
    /// Columns are appended in index order, so the utility depends on the
    /// set only.
    fn evaluate(&self, subset: &[usize]) -> Result<f64> {
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        self.task.utility(&self.columns.augment(self.base, &sorted))
    }
}

/// A search instance: candidate ids (sorted), their profile vectors, and
/// the utility oracle.
pub struct Problem<'a> {
    pub ids: &'a [String],
    pub profiles: &'a [Vec<f64>],
    pub oracle: &'a dyn SubsetOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Sequential,
    Group,
    Homogeneity,
    Minimality,
    Monotonicity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub subset: Vec<String>,
    pub utility: f64,
    pub mechanism: Mechanism,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub theta: f64,
    /// `None` resolves to the current number of clusters.
    pub tau: Option<usize>,
    pub epsilon: f64,
    pub max_queries: usize,
    pub max_seconds: Option<f64>,
    pub max_solution_size: Option<usize>,
    pub seed: u64,
    pub group_enabled: bool,
    pub homogeneity_min_size: usize,
    pub ridge: f64,
    pub resample_limit: usize,
    pub mw_eta: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            theta: 1.0,
            tau: None,
            epsilon: crate::clustering::DEFAULT_EPSILON,
            max_queries: DEFAULT_MAX_QUERIES,
            max_seconds: None,
            max_solution_size: None,
            seed: 0,
            group_enabled: true,
            homogeneity_min_size: DEFAULT_HOMOGENEITY_MIN_SIZE,
            ridge: crate::scoring::DEFAULT_RIDGE,
            resample_limit: DEFAULT_RESAMPLE_LIMIT,
            mw_eta: crate::baselines::DEFAULT_MW_ETA,
        }
    }
}

impl SearchConfig {
    pub fn with_theta(theta: f64) -> Self {
        SearchConfig {
            theta,
            ..SearchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidConfig(format!("theta {} outside (0, 1]", self.theta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon {} outside (0, 1]", self.epsilon)));
        }
        if self.tau == Some(0) {
            return Err(Error::InvalidConfig("tau must be at least 1".into()));
        }
        if self.max_seconds.is_some_and(|s| s.is_nan() || s < 0.0) {
            return Err(Error::InvalidConfig("max_seconds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn time_limit(&self) -> Option<Duration> {
        self.max_seconds.map(Duration::from_secs_f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BaseSufficient,
    NoCandidates,
    ThetaReached,
    Budget,
    Time,
    SolutionSize,
    Exhausted,
    NoImprovement,
    TaskFailure,
    SingleEvaluation,
}

/// Inputs of the stop test, snapshot by the search loop.
#[derive(Clone, Copy, Debug)]
pub struct StopState {
    pub utility: f64,
    pub queries: usize,
    pub elapsed: Duration,
    pub solution_size: usize,
    pub exhausted_without_improvement: bool,
}

pub fn check_stop(state: &StopState, config: &SearchConfig) -> bool {
    state.utility >= config.theta
        || state.queries >= config.max_queries
        || config.time_limit().is_some_and(|t| state.elapsed >= t)
        || config.max_solution_size.is_some_and(|k| state.solution_size >= k)
        || state.exhausted_without_improvement
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub clusters: usize,
    pub largest: usize,
    pub singletons: usize,
    pub dissolved: usize,
    pub homogeneity_checks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub strategy: String,
    /// Augmentation ids of the final minimal set, in insertion order.
    pub augmentations: Vec<String>,
    #[serde(skip)]
    pub indices: Vec<usize>,
    pub utility: f64,
    pub base_utility: f64,
    pub theta: f64,
    pub reached: bool,
    pub stop: StopReason,
    /// Task evaluations spent by the search, excluding the minimality pass.
    pub queries: usize,
    pub query_log: Vec<QueryRecord>,
    /// Accepted utility after each certified acceptance, starting at the base.
    pub accepted_trajectory: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub beta_trajectory: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_stats: Option<ClusterStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Solution {
    /// 1-based number of evaluations until one reached θ.
    pub fn queries_to_theta(&self) -> Option<usize> {
        self.query_log
            .iter()
            .filter(|r| r.mechanism != Mechanism::Minimality)
            .position(|r| r.utility >= self.theta)
            .map(|p| p + 1)
    }

    /// Best utility seen after each search evaluation.
    pub fn curve(&self) -> Vec<(usize, f64)> {
        let mut best = f64::NEG_INFINITY;
        self.query_log
            .iter()
            .filter(|r| r.mechanism != Mechanism::Minimality)
            .enumerate()
            .map(|(i, r)| {
                best = best.max(r.utility);
                (i + 1, best)
            })
            .collect()
    }

    /// JSON Lines rendering of the query log.
    pub fn query_log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.query_log {
            out.push_str(&serde_json::to_string(r).expect("query records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Chooses the final set among `choices` (utility, insertion-ordered set),
/// runs the minimality pass, and assembles the [`Solution`].
pub(crate) fn finalize(
    strategy: &str,
    eng: &mut QueryEngine<'_>,
    ids: &[String],
    base: f64,
    choices: Vec<(Vec<usize>, f64)>,
    mut stop: StopReason,
) -> Solution {
    let theta = eng.theta();
    let mut chosen: (Vec<usize>, f64) = (Vec::new(), base);
    for (set, u) in choices {
        if u > chosen.1 || (u == chosen.1 && set.len() < chosen.0.len()) {
            chosen = (set, u);
        }
    }
    if let Some((set, u)) = eng.best() {
        if u > chosen.1 || (u >= theta && chosen.1 < theta) {
            chosen = (set.to_vec(), u);
        }
    }
    let mut error = None;
    let (set, utility) = if chosen.0.is_empty() {
        chosen
    } else {
        match identify_minimal(eng, &chosen.0, theta) {
            Ok(r) => r,
            Err(Halt::Failed(e)) => {
                error = Some(e.to_string());
                stop = StopReason::TaskFailure;
                chosen
            }
            Err(_) => chosen,
        }
    };
    Solution {
        strategy: strategy.to_string(),
        augmentations: set.iter().map(|&i| ids[i].clone()).collect(),
        indices: set,
        utility,
        base_utility: base,
        theta,
        reached: utility >= theta,
        stop,
        queries: eng.search_queries(),
        query_log: eng.records(ids),
        accepted_trajectory: eng.accepted_trajectory().to_vec(),
        beta: None,
        beta_trajectory: Vec::new(),
        cluster_stats: None,
        error,
    }
}

/// Solution for a run that stopped before any search step (base failed,
/// base already sufficient, or no candidates).
pub(crate) fn early_solution(strategy: &str, eng: &QueryEngine<'_>, ids: &[String], base: f64, stop: StopReason, error: Option<String>) -> Solution {
    Solution {
        strategy: strategy.to_string(),
        augmentations: Vec::new(),
        indices: Vec::new(),
        utility: base,
        base_utility: base,
        theta: eng.theta(),
        reached: base >= eng.theta(),
        stop,
        queries: eng.search_queries(),
        query_log: eng.records(ids),
        accepted_trajectory: eng.accepted_trajectory().to_vec(),
        beta: None,
        beta_trajectory: Vec::new(),
        cluster_stats: None,
        error,
    }
}

pub(crate) fn halt_reason(h: &Halt) -> (StopReason, Option<String>) {
    match h {
        Halt::Budget => (StopReason::Budget, None),
        Halt::Time => (StopReason::Time, None),
        Halt::Failed(e) => (StopReason::TaskFailure, Some(e.to_string())),
    }
}
