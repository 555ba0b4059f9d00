use std::collections::HashMap;
use std::time::{Duration, Instant};

use super::{Mechanism, QueryRecord, SearchConfig, SubsetOracle};
use crate::error::Error;

/// Why the engine refused or failed a query.
#[derive(Debug)]
pub enum Halt {
    Budget,
    Time,
    Failed(Error),
}

/// Single gateway between a search strategy and the task.
///
/// Utilities are memoized by the sorted subset, so repeating a subset costs
/// nothing and is not logged. Minimality evaluations are logged but do not
/// count against the query budget.
pub struct QueryEngine<'a> {
    oracle: &'a dyn SubsetOracle,
    theta: f64,
    max_queries: usize,
    max_solution_size: Option<usize>,
    started: Instant,
    time_limit: Option<Duration>,
    memo: HashMap<Vec<usize>, f64>,
    log: Vec<(Vec<usize>, f64, Mechanism)>,
    search_queries: usize,
    best: Option<(Vec<usize>, f64)>,
    accepted: f64,
    trajectory: Vec<f64>,
}

fn canonical(set: &[usize]) -> Vec<usize> {
    let mut key = set.to_vec();
    key.sort_unstable();
    key.dedup();
    key
}

impl<'a> QueryEngine<'a> {
    pub fn new(oracle: &'a dyn SubsetOracle, config: &SearchConfig) -> Self {
        QueryEngine {
            oracle,
            theta: config.theta,
            max_queries: config.max_queries,
            max_solution_size: config.max_solution_size,
            started: Instant::now(),
            time_limit: config.time_limit(),
            memo: HashMap::new(),
            log: Vec::new(),
            search_queries: 0,
            best: None,
            accepted: f64::NEG_INFINITY,
            trajectory: Vec::new(),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Utility of the unaugmented input. Not logged and not counted; it
    /// becomes the first accepted utility.
    pub fn base(&mut self) -> Result<f64, Halt> {
        let u = match self.memo.get(&Vec::new()) {
            Some(&u) => u,
            None => {
                let u = self.oracle.evaluate(&[]).map_err(Halt::Failed)?;
                self.memo.insert(Vec::new(), u);
                u
            }
        };
        if self.trajectory.is_empty() {
            self.accepted = u;
            self.trajectory.push(u);
        }
        Ok(u)
    }

    pub fn lookup(&self, set: &[usize]) -> Option<f64> {
        self.memo.get(&canonical(set)).copied()
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    /// Evaluates `set` (in insertion order) through the task.
    pub fn evaluate(&mut self, set: &[usize], mechanism: Mechanism) -> Result<f64, Halt> {
        let key = canonical(set);
        if let Some(&u) = self.memo.get(&key) {
            return Ok(u);
        }
        if mechanism != Mechanism::Minimality {
            if self.search_queries >= self.max_queries {
                return Err(Halt::Budget);
            }
            if self.time_limit.is_some_and(|t| self.started.elapsed() >= t) {
                return Err(Halt::Time);
            }
        }
        let u = self.oracle.evaluate(&key).map_err(Halt::Failed)?;
        self.memo.insert(key.clone(), u);
        self.log.push((key, u, mechanism));
        if mechanism != Mechanism::Minimality {
            self.search_queries += 1;
            let fits = self.max_solution_size.is_none_or(|k| set.len() <= k);
            if fits && self.best.as_ref().is_none_or(|(_, b)| u > *b) {
                self.best = Some((set.to_vec(), u));
            }
        }
        Ok(u)
    }

    /// Monotonicity certificate: accepts `utility` only if it strictly
    /// improves the accepted utility.
    pub fn accept(&mut self, utility: f64) -> bool {
        if utility > self.accepted {
            self.accepted = utility;
            self.trajectory.push(utility);
            true
        } else {
            false
        }
    }

    pub fn accepted(&self) -> f64 {
        self.accepted
    }

    pub fn accepted_trajectory(&self) -> &[f64] {
        &self.trajectory
    }

    pub fn search_queries(&self) -> usize {
        self.search_queries
    }

    pub fn total_queries(&self) -> usize {
        self.log.len()
    }

    /// Best search evaluation so far, in its original insertion order.
    pub fn best(&self) -> Option<(&[usize], f64)> {
        self.best.as_ref().map(|(s, u)| (s.as_slice(), *u))
    }

    pub fn reached(&self) -> bool {
        self.best.as_ref().is_some_and(|(_, u)| *u >= self.theta)
    }

    pub fn records(&self, ids: &[String]) -> Vec<QueryRecord> {
        self.log
            .iter()
            .enumerate()
            .map(|(index, (s, u, m))| QueryRecord {
                index,
                subset: s.iter().map(|&i| ids[i].clone()).collect(),
                utility: *u,
                mechanism: *m,
            })
            .collect()
    }
}
