//! Baseline intervention strategies sharing the search engine's query
//! gateway, stopping rules, certificate and minimality pass.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{
    early_solution, finalize, halt_reason, run_metam, Halt, Mechanism, Problem, QueryEngine, SearchConfig, Solution,
    StopReason,
};

pub const JOIN_EVERYTHING_CAP: usize = 500;
pub const DEFAULT_MW_ETA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Metam,
    Mw,
    Overlap,
    Uniform,
    JoinEverything,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Metam,
        Strategy::Mw,
        Strategy::Overlap,
        Strategy::Uniform,
        Strategy::JoinEverything,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Metam => "metam",
            Strategy::Mw => "mw",
            Strategy::Overlap => "overlap",
            Strategy::Uniform => "uniform",
            Strategy::JoinEverything => "join-everything",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "metam" => Ok(Strategy::Metam),
            "mw" => Ok(Strategy::Mw),
            "overlap" => Ok(Strategy::Overlap),
            "uniform" => Ok(Strategy::Uniform),
            "join-everything" => Ok(Strategy::JoinEverything),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Runs `strategy`. `overlap_dim` is the index of the overlap profile,
/// required by the overlap baseline.
pub fn run_strategy(strategy: Strategy, problem: &Problem<'_>, overlap_dim: Option<usize>, config: &SearchConfig) -> Result<Solution> {
    match strategy {
        Strategy::Metam => run_metam(problem, config),
        Strategy::Mw => run_mw(problem, config),
        Strategy::Overlap => {
            let dim = overlap_dim.ok_or_else(|| Error::InvalidConfig("overlap strategy needs the overlap profile".into()))?;
            let scores: Vec<f64> = problem.profiles.iter().map(|p| p[dim]).collect();
            run_overlap(problem, &scores, config)
        }
        Strategy::Uniform => run_uniform(problem, config),
        Strategy::JoinEverything => run_join_everything(problem, config),
    }
}

/// Greedy accumulation: `next` names the next unqueried candidate and
/// `feedback` receives its clamped gain. Each candidate is queried once,
/// against the augmented table at that time.
fn run_greedy(
    name: &str,
    problem: &Problem<'_>,
    config: &SearchConfig,
    mut next: impl FnMut(&[bool], &mut ChaCha8Rng) -> Option<usize>,
    mut feedback: impl FnMut(usize, f64),
) -> Result<Solution> {
    config.validate()?;
    let mut eng = QueryEngine::new(problem.oracle, config);
    let base = match eng.base() {
        Ok(u) => u,
        Err(h) => {
            let (stop, err) = halt_reason(&h);
            return Ok(early_solution(name, &eng, problem.ids, f64::NAN, stop, err));
        }
    };
    if base >= config.theta {
        return Ok(early_solution(name, &eng, problem.ids, base, StopReason::BaseSufficient, None));
    }
    if problem.ids.is_empty() {
        return Ok(early_solution(name, &eng, problem.ids, base, StopReason::NoCandidates, None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut queried = vec![false; problem.ids.len()];
    let mut set: Vec<usize> = Vec::new();
    let mut current = base;
    let mut error = None;
    let stop = loop {
        let Some(c) = next(&queried, &mut rng) else {
            break StopReason::Exhausted;
        };
        queried[c] = true;
        let mut trial = set.clone();
        trial.push(c);
        match eng.evaluate(&trial, Mechanism::Sequential) {
            Ok(u) => {
                feedback(c, (u - current).clamp(0.0, 1.0));
                if eng.accept(u) {
                    set = trial;
                    current = u;
                }
                if u >= config.theta {
                    break StopReason::ThetaReached;
                }
                if config.max_solution_size.is_some_and(|k| set.len() >= k) {
                    break StopReason::SolutionSize;
                }
            }
            Err(h) => {
                let (stop, err) = halt_reason(&h);
                error = err;
                break stop;
            }
        }
    };
    let mut sol = finalize(name, &mut eng, problem.ids, base, vec![(set, current)], stop);
    if sol.error.is_none() {
        sol.error = error;
    }
    Ok(sol)
}

/// Candidates ordered by descending score, ties by id.
fn ranking(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Multiplicative-weights expert update: `w ← w·(1 + η·r)`.
pub fn mw_update(weights: &mut [f64], expert: usize, reward: f64, eta: f64) {
    weights[expert] *= 1.0 + eta * reward.clamp(0.0, 1.0);
}

/// Randomized multiplicative weights with one expert per profile. Each
/// round samples an expert in proportion to its weight and queries that
/// expert's best unqueried candidate.
pub fn run_mw(problem: &Problem<'_>, config: &SearchConfig) -> Result<Solution> {
    let dim = problem.profiles.first().map_or(0, Vec::len);
    let rankings: Vec<Vec<usize>> = (0..dim)
        .map(|e| ranking(problem.profiles.iter().map(|p| p[e])))
        .collect();
    let mut cursor = vec![0usize; dim];
    let weights = std::cell::RefCell::new(vec![1.0; dim]);
    let chosen = std::cell::Cell::new(0usize);
    let n = problem.ids.len();
    let next = |queried: &[bool], rng: &mut ChaCha8Rng| {
        if dim == 0 {
            return (0..n).find(|&i| !queried[i]);
        }
        let w = weights.borrow();
        let total: f64 = w.iter().sum();
        let mut x = rng.random::<f64>() * total;
        let mut e = dim - 1;
        for (i, wi) in w.iter().enumerate() {
            if x < *wi {
                e = i;
                break;
            }
            x -= wi;
        }
        while cursor[e] < n && queried[rankings[e][cursor[e]]] {
            cursor[e] += 1;
        }
        chosen.set(e);
        rankings[e].get(cursor[e]).copied()
    };
    let feedback = |_: usize, gain: f64| {
        if dim > 0 {
            mw_update(&mut weights.borrow_mut(), chosen.get(), gain, config.mw_eta);
        }
    };
    let mut sol = run_greedy("mw", problem, config, next, feedback)?;
    sol.beta = Some(weights.into_inner());
    Ok(sol)
}

/// Queries candidates in descending overlap, ties by id.
pub fn run_overlap(problem: &Problem<'_>, overlap: &[f64], config: &SearchConfig) -> Result<Solution> {
    let order = ranking(overlap.iter().copied());
    let mut pos = 0;
    let next = |_: &[bool], _: &mut ChaCha8Rng| {
        let c = order.get(pos).copied();
        pos += 1;
        c
    };
    run_greedy("overlap", problem, config, next, |_, _| {})
}

/// Seeded uniform permutation of the candidates.
pub fn uniform_order(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

pub fn run_uniform(problem: &Problem<'_>, config: &SearchConfig) -> Result<Solution> {
    let mut order: Option<Vec<usize>> = None;
    let mut pos = 0;
    let n = problem.ids.len();
    let next = |_: &[bool], rng: &mut ChaCha8Rng| {
        let order = order.get_or_insert_with(|| uniform_order(n, rng));
        let c = order.get(pos).copied();
        pos += 1;
        c
    };
    run_greedy("uniform", problem, config, next, |_, _| {})
}

/// One evaluation of the input joined with every candidate.
pub fn run_join_everything(problem: &Problem<'_>, config: &SearchConfig) -> Result<Solution> {
    config.validate()?;
    let n = problem.ids.len();
    if n > JOIN_EVERYTHING_CAP {
        return Err(Error::TooWide(n, JOIN_EVERYTHING_CAP));
    }
    let name = "join-everything";
    let mut eng = QueryEngine::new(problem.oracle, config);
    let base = match eng.base() {
        Ok(u) => u,
        Err(h) => {
            let (stop, err) = halt_reason(&h);
            return Ok(early_solution(name, &eng, problem.ids, f64::NAN, stop, err));
        }
    };
    if n == 0 {
        return Ok(early_solution(name, &eng, problem.ids, base, StopReason::NoCandidates, None));
    }
    let all: Vec<usize> = (0..n).collect();
    let mut sol = match eng.evaluate(&all, Mechanism::Sequential) {
        Ok(u) => {
            eng.accept(u);
            let mut sol = early_solution(name, &eng, problem.ids, base, StopReason::SingleEvaluation, None);
            sol.augmentations = problem.ids.to_vec();
            sol.indices = all;
            sol.utility = u;
            sol.reached = u >= config.theta;
            sol
        }
        Err(Halt::Failed(e)) => early_solution(name, &eng, problem.ids, base, StopReason::TaskFailure, Some(e.to_string())),
        Err(h) => early_solution(name, &eng, problem.ids, base, halt_reason(&h).0, None),
    };
    sol.queries = eng.search_queries();
    Ok(sol)
}
