use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use super::{
    early_solution, finalize, halt_reason, ClusterStats, Halt, Mechanism, Problem, QueryEngine, SearchConfig, Solution,
    StopReason,
};
use crate::clustering::{cluster_partition, homogeneity_members, is_homogeneous, ClusterSet, Homogeneity};
use crate::error::Result;
use crate::scoring::QualityState;

/// Thompson sampling over clusters: `t` draws with replacement, each taking
/// the cluster with the largest Beta posterior sample, then one uniform
/// member of that cluster not already in the subset. Returns a sorted,
/// deduplicated subset.
pub fn identify_group(members: &[Vec<usize>], posteriors: &[(f64, f64)], t: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut subset: Vec<usize> = Vec::with_capacity(t);
    for _ in 0..t {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (c, &(a, b)) in posteriors.iter().enumerate() {
            if members[c].is_empty() {
                continue;
            }
            let draw = Beta::new(a, b).map_or(0.5, |d| d.sample(rng));
            if draw > best.1 {
                best = (c, draw);
            }
        }
        if best.0 == usize::MAX {
            break;
        }
        let free: Vec<usize> = members[best.0].iter().copied().filter(|m| !subset.contains(m)).collect();
        if !free.is_empty() {
            subset.push(free[rng.random_range(0..free.len())]);
        }
    }
    subset.sort_unstable();
    subset.dedup();
    subset
}

/// State of the group mechanism: subset size, per-cluster posteriors and
/// the subsets it has already proposed.
pub struct GroupSampler {
    pub t: usize,
    pub posteriors: Vec<(f64, f64)>,
    members: Vec<Vec<usize>>,
    seen: HashSet<Vec<usize>>,
    resample_limit: usize,
    n: usize,
    pub exhausted: bool,
}

impl GroupSampler {
    pub fn new(clusters: &ClusterSet, resample_limit: usize) -> Self {
        let mut g = GroupSampler {
            t: 1,
            posteriors: vec![(1.0, 1.0); clusters.len()],
            members: Vec::new(),
            seen: HashSet::new(),
            resample_limit: resample_limit.max(1),
            n: clusters.assignment.len(),
            exhausted: false,
        };
        g.refresh(clusters, &[]);
        g
    }

    /// Rebuilds member lists after clusters changed, resetting `reset`
    /// slots (and any new ones) to the uniform prior.
    pub fn refresh(&mut self, clusters: &ClusterSet, reset: &[usize]) {
        self.members = vec![Vec::new(); clusters.len()];
        for (i, &c) in clusters.assignment.iter().enumerate() {
            self.members[c].push(i);
        }
        self.posteriors.resize(clusters.len(), (1.0, 1.0));
        for &s in reset {
            self.posteriors[s] = (1.0, 1.0);
        }
    }

    /// Next subset not yet evaluated anywhere, or `None` once `t` exceeds
    /// the candidate count.
    pub fn propose(&mut self, rng: &mut impl Rng, evaluated: impl Fn(&[usize]) -> bool) -> Option<Vec<usize>> {
        while !self.exhausted {
            for _ in 0..self.resample_limit {
                let s = identify_group(&self.members, &self.posteriors, self.t, rng);
                if !s.is_empty() && !self.seen.contains(&s) && !evaluated(&s) {
                    self.seen.insert(s.clone());
                    return Some(s);
                }
            }
            self.t += 1;
            if self.t > self.n {
                self.exhausted = true;
            }
        }
        None
    }

    pub fn reward(&mut self, subset: &[usize], clusters: &ClusterSet, success: bool) {
        let mut slots: Vec<usize> = subset.iter().map(|&i| clusters.assignment[i]).collect();
        slots.sort_unstable();
        slots.dedup();
        for s in slots {
            let p = &mut self.posteriors[s];
            if success {
                p.0 += 1.0;
            } else {
                p.1 += 1.0;
            }
        }
    }
}

struct Metam<'p, 'e> {
    problem: &'p Problem<'p>,
    config: &'p SearchConfig,
    eng: QueryEngine<'e>,
    rng: ChaCha8Rng,
    clusters: ClusterSet,
    quality: QualityState,
    group: GroupSampler,
    base: f64,
    /// T*, in insertion order, and its certified utility.
    seq: Vec<usize>,
    u_seq: f64,
    in_seq: Vec<bool>,
    /// Candidates already queried against the current T*.
    tried: Vec<bool>,
    /// T*_c, evaluated on the unaugmented input.
    grp: Vec<usize>,
    u_grp: f64,
    beta_trajectory: Vec<Vec<f64>>,
    homogeneity_checks: usize,
    dissolved: usize,
}

enum Pass {
    Improved,
    Stalled,
}

impl Metam<'_, '_> {
    fn n(&self) -> usize {
        self.problem.ids.len()
    }

    /// Stops the whole search as soon as any evaluation reaches θ.
    fn query(&mut self, set: &[usize], mechanism: Mechanism) -> Result<f64, Option<Halt>> {
        let u = self.eng.evaluate(set, mechanism).map_err(Some)?;
        if u >= self.config.theta {
            return Err(None);
        }
        Ok(u)
    }

    fn with_seq(&self, aug: usize) -> Vec<usize> {
        let mut set = self.seq.clone();
        set.push(aug);
        set
    }

    fn observe(&mut self, aug: usize, u: f64) {
        self.quality
            .update(aug, u, self.u_seq, self.problem.profiles, &self.clusters);
        self.beta_trajectory.push(self.quality.weights.beta.clone());
    }

    /// Highest-quality untried candidate outside T* whose cluster was not
    /// yet queried in this sweep. Ties go to the smaller id.
    fn select(&self, excluded: &[bool]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.n() {
            if self.in_seq[i] || self.tried[i] || excluded[self.clusters.assignment[i]] {
                continue;
            }
            let q = self.quality.quality(i);
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((i, q));
            }
        }
        best.map(|(i, _)| i)
    }

    /// One sequential step; records queried members in `q`. Once every
    /// cluster was visited without improvement a new sweep starts, so the
    /// step is exhausted only when every candidate was tried against T*.
    fn sequential(
        &mut self,
        excluded: &mut Vec<bool>,
        q: &mut Vec<(usize, f64)>,
        improved: bool,
    ) -> Result<bool, Option<Halt>> {
        let mut pick = self.select(excluded);
        if pick.is_none() && !improved {
            excluded.iter_mut().for_each(|x| *x = false);
            pick = self.select(excluded);
        }
        let Some(aug) = pick else {
            return Ok(false);
        };
        let slot = self.clusters.assignment[aug];
        excluded[slot] = true;
        self.tried[aug] = true;
        let u = self.query(&self.with_seq(aug), Mechanism::Sequential)?;
        q.push((aug, u));
        self.observe(aug, u);
        let members = self.clusters.members(slot);
        if members.len() >= self.config.homogeneity_min_size && self.clusters.homogeneous[slot] == Homogeneity::Untested {
            self.homogeneity_checks += 1;
            let sampled = homogeneity_members(&members, aug, &mut self.rng);
            let mut utilities = vec![u];
            for &m in &sampled[1..] {
                self.tried[m] = true;
                let um = self.query(&self.with_seq(m), Mechanism::Homogeneity)?;
                q.push((m, um));
                self.observe(m, um);
                utilities.push(um);
            }
            if is_homogeneous(&utilities, self.config.epsilon) {
                self.clusters.homogeneous[slot] = Homogeneity::Yes;
            } else {
                log::debug!("cluster {slot} failed the homogeneity test; dissolving {} members", members.len());
                self.dissolved += 1;
                let slots = self.clusters.dissolve(slot);
                self.quality.clear_propagated(&members);
                self.group.refresh(&self.clusters, &slots);
                excluded.resize(self.clusters.len(), false);
                for &m in &sampled {
                    excluded[self.clusters.assignment[m]] = true;
                }
            }
        }
        Ok(true)
    }

    /// One group probe on Γ(D_in, subset).
    fn group_probe(&mut self) -> Result<bool, Option<Halt>> {
        let eng = &self.eng;
        let Some(subset) = self.group.propose(&mut self.rng, |s| eng.lookup(s).is_some()) else {
            return Ok(false);
        };
        let prior = self.base.max(self.u_grp);
        let u = self.eng.evaluate(&subset, Mechanism::Group).map_err(Some)?;
        let success = u > prior;
        self.group.reward(&subset, &self.clusters, success);
        if success {
            self.grp = subset;
            self.u_grp = u;
        }
        if u >= self.config.theta {
            return Err(None);
        }
        Ok(true)
    }

    fn improved(&self, q: &[(usize, f64)]) -> bool {
        q.iter().any(|&(_, u)| u > self.u_seq) || self.u_grp > self.u_seq
    }

    fn pass(&mut self) -> Result<Pass, Option<Halt>> {
        let tau = self.config.tau.unwrap_or(self.clusters.len()).max(1);
        let mut excluded = vec![false; self.clusters.len()];
        let mut q: Vec<(usize, f64)> = Vec::new();
        let mut seq_done = false;
        let mut i = 0;
        self.tried.iter_mut().for_each(|x| *x = false);
        loop {
            if !seq_done {
                let improved = self.improved(&q);
                seq_done = !self.sequential(&mut excluded, &mut q, improved)?;
            }
            let group_done = !self.config.group_enabled || self.group.exhausted || !self.group_probe()?;
            i += 1;
            let improved = self.improved(&q);
            if improved && (i >= tau || seq_done) {
                break;
            }
            if seq_done && group_done {
                break;
            }
        }
        self.accept_best(q)
    }

    /// Tries the pass's candidates in descending utility and accepts the
    /// first that the monotonicity certificate admits.
    fn accept_best(&mut self, q: Vec<(usize, f64)>) -> Result<Pass, Option<Halt>> {
        let mut options: Vec<(Option<usize>, f64)> = q
            .into_iter()
            .filter(|&(a, u)| u > self.u_seq && !self.in_seq[a])
            .map(|(a, u)| (Some(a), u))
            .collect();
        if self.u_grp > self.u_seq && !self.grp.iter().all(|&g| self.in_seq[g]) {
            options.push((None, self.u_grp));
        }
        options.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (aug, _) in options {
            let (set, u) = match aug {
                Some(a) => {
                    let set = self.with_seq(a);
                    let u = self.eng.lookup(&set).expect("sequential queries are memoized");
                    (set, u)
                }
                None => {
                    let mut set = self.seq.clone();
                    set.extend(self.grp.iter().copied().filter(|&g| !self.in_seq[g]));
                    let u = self.query(&set, Mechanism::Monotonicity)?;
                    (set, u)
                }
            };
            if self.eng.accept(u) {
                for &a in &set[self.seq.len()..] {
                    self.in_seq[a] = true;
                }
                self.seq = set;
                self.u_seq = u;
                return Ok(Pass::Improved);
            }
        }
        Ok(Pass::Stalled)
    }

    fn search(&mut self) -> Result<StopReason, Halt> {
        while self.u_seq < self.config.theta && self.u_grp < self.config.theta {
            match self.pass() {
                Ok(Pass::Improved) => {
                    if self.config.max_solution_size.is_some_and(|k| self.seq.len() >= k) {
                        return Ok(StopReason::SolutionSize);
                    }
                }
                Ok(Pass::Stalled) => return Ok(StopReason::Exhausted),
                Err(None) => return Ok(StopReason::ThetaReached),
                Err(Some(h)) => return Err(h),
            }
        }
        Ok(StopReason::ThetaReached)
    }

    fn cluster_stats(&self) -> ClusterStats {
        let sizes = self.clusters.sizes();
        ClusterStats {
            clusters: sizes.iter().filter(|&&s| s > 0).count(),
            largest: sizes.iter().copied().max().unwrap_or(0),
            singletons: sizes.iter().filter(|&&s| s == 1).count(),
            dissolved: self.dissolved,
            homogeneity_checks: self.homogeneity_checks,
        }
    }
}

/// Interleaved sequential and group search for a minimal augmentation set
/// reaching θ.
pub fn run_metam(problem: &Problem<'_>, config: &SearchConfig) -> Result<Solution> {
    config.validate()?;
    let mut eng = QueryEngine::new(problem.oracle, config);
    let base = match eng.base() {
        Ok(u) => u,
        Err(h) => {
            let (stop, err) = halt_reason(&h);
            return Ok(early_solution("metam", &eng, problem.ids, f64::NAN, stop, err));
        }
    };
    if base >= config.theta {
        return Ok(early_solution("metam", &eng, problem.ids, base, StopReason::BaseSufficient, None));
    }
    if problem.ids.is_empty() {
        return Ok(early_solution("metam", &eng, problem.ids, base, StopReason::NoCandidates, None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clusters = cluster_partition(problem.profiles, config.epsilon, rng.random())?;
    log::info!("{} candidates in {} clusters", problem.ids.len(), clusters.len());
    let group = GroupSampler::new(&clusters, config.resample_limit);
    let mut m = Metam {
        problem,
        config,
        eng,
        rng,
        quality: QualityState::new(problem.profiles, config.ridge),
        clusters,
        group,
        base,
        seq: Vec::new(),
        u_seq: base,
        in_seq: vec![false; problem.ids.len()],
        tried: vec![false; problem.ids.len()],
        grp: Vec::new(),
        u_grp: base,
        beta_trajectory: Vec::new(),
        homogeneity_checks: 0,
        dissolved: 0,
    };
    let (stop, error) = match m.search() {
        Ok(s) => (s, None),
        Err(h) => halt_reason(&h),
    };
    let stats = m.cluster_stats();
    let beta = m.quality.weights.beta.clone();
    let choices = vec![(m.seq.clone(), m.u_seq), (m.grp.clone(), m.u_grp)];
    let mut sol = finalize("metam", &mut m.eng, problem.ids, base, choices, stop);
    if sol.error.is_none() {
        sol.error = error;
    }
    sol.beta = Some(beta);
    sol.beta_trajectory = std::mem::take(&mut m.beta_trajectory);
    sol.cluster_stats = Some(stats);
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{FnOracle, SubsetOracle};

    fn problem<'a>(ids: &'a [String], profiles: &'a [Vec<f64>], oracle: &'a dyn SubsetOracle) -> Problem<'a> {
        Problem { ids, profiles, oracle }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i:02}")).collect()
    }

    #[test]
    fn thompson_prefers_the_stronger_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let members = vec![vec![0], vec![1]];
        let post = vec![(4.0, 1.0), (1.0, 4.0)];
        let first = (0..1000)
            .filter(|_| identify_group(&members, &post, 1, &mut rng) == vec![0])
            .count();
        assert!(first > 700, "{first}");
    }

    #[test]
    fn single_cluster_single_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(identify_group(&[vec![4]], &[(1.0, 1.0)], 1, &mut rng), vec![4]);
    }

    #[test]
    fn group_size_grows_after_singletons_are_used() {
        let profiles = vec![vec![0.0], vec![0.5], vec![1.0]];
        let clusters = cluster_partition(&profiles, 0.05, 0).unwrap();
        let mut g = GroupSampler::new(&clusters, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = HashSet::new();
        for _ in 0..3 {
            let s = g.propose(&mut rng, |_| false).unwrap();
            assert_eq!(s.len(), 1);
            seen.insert(s);
        }
        assert_eq!(seen.len(), 3);
        let s = g.propose(&mut rng, |_| false).unwrap();
        assert_eq!(g.t, 2);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn base_sufficient_costs_nothing() {
        let oracle = FnOracle(|_: &[usize]| Ok(0.9));
        let ids = ids(3);
        let profiles = vec![vec![0.1]; 3];
        let sol = run_metam(&problem(&ids, &profiles, &oracle), &SearchConfig::with_theta(0.8)).unwrap();
        assert!(sol.augmentations.is_empty());
        assert_eq!(sol.queries, 0);
        assert_eq!(sol.stop, StopReason::BaseSufficient);
    }

    #[test]
    fn single_useful_candidate() {
        let oracle = FnOracle(|s: &[usize]| Ok(if s.contains(&0) { 0.9 } else { 0.3 }));
        let ids = ids(1);
        let sol = run_metam(&problem(&ids, &[vec![0.5]], &oracle), &SearchConfig::with_theta(0.8)).unwrap();
        assert_eq!(sol.augmentations, vec!["a00".to_string()]);
        assert!(sol.reached);
    }

    #[test]
    fn additive_pair_is_found_and_trajectory_is_monotone() {
        // Two useful candidates among 30; profiles carry a weak hint.
        let n = 30;
        let oracle = FnOracle(|s: &[usize]| {
            let mut u = 0.3;
            if s.contains(&7) {
                u += 0.3;
            }
            if s.contains(&19) {
                u += 0.3;
            }
            Ok(u - 0.001 * s.len() as f64)
        });
        let ids = ids(n);
        let profiles: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 * 0.37) % 1.0, ((i * i) as f64 * 0.11) % 1.0]).collect();
        for seed in 0..10 {
            let cfg = SearchConfig {
                seed,
                ..SearchConfig::with_theta(0.85)
            };
            let sol = run_metam(&problem(&ids, &profiles, &oracle), &cfg).unwrap();
            let mut got = sol.augmentations.clone();
            got.sort();
            assert_eq!(got, vec!["a07".to_string(), "a19".to_string()], "seed {seed}");
            assert!(sol.accepted_trajectory.windows(2).all(|w| w[0] <= w[1]));
            assert!(sol.queries <= 2 * n + 10, "{} queries", sol.queries);
        }
    }

    #[test]
    fn sweeps_visit_each_cluster_once() {
        // Nothing helps, so the search runs to exhaustion.
        let oracle = FnOracle(|_: &[usize]| Ok(0.2));
        let ids = ids(12);
        let profiles: Vec<Vec<f64>> = (0..12).map(|i| vec![(i / 4) as f64 * 0.4 + (i % 4) as f64 * 0.001]).collect();
        let cfg = SearchConfig {
            group_enabled: false,
            homogeneity_min_size: 100,
            ..SearchConfig::with_theta(0.9)
        };
        let sol = run_metam(&problem(&ids, &profiles, &oracle), &cfg).unwrap();
        let seq: Vec<_> = sol.query_log.iter().filter(|r| r.mechanism == Mechanism::Sequential).collect();
        assert_eq!(seq.len(), 12);
        for sweep in seq.chunks(3) {
            let mut clusters: Vec<usize> = sweep.iter().map(|r| r.subset[0][1..].parse::<usize>().unwrap() / 4).collect();
            clusters.sort_unstable();
            assert_eq!(clusters, vec![0, 1, 2]);
        }
        assert_eq!(sol.stop, StopReason::Exhausted);
    }

    #[test]
    fn task_failure_returns_partial_solution() {
        let oracle = FnOracle(|s: &[usize]| {
            if s.len() > 1 {
                Err(crate::Error::TaskFailure("crash".into()))
            } else {
                Ok(0.1 + 0.1 * s.len() as f64)
            }
        });
        let ids = ids(4);
        let profiles: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 / 4.0]).collect();
        let sol = run_metam(&problem(&ids, &profiles, &oracle), &SearchConfig::with_theta(0.9)).unwrap();
        assert_eq!(sol.stop, StopReason::TaskFailure);
        assert!(sol.error.is_some());
        assert!(!sol.query_log.is_empty());
    }

    #[test]
    fn runs_are_reproducible() {
        let oracle = FnOracle(|s: &[usize]| Ok(0.2 + 0.05 * s.iter().filter(|&&i| i % 3 == 0).count() as f64));
        let ids = ids(20);
        let profiles: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 * 0.13) % 1.0]).collect();
        let cfg = SearchConfig {
            seed: 4,
            ..SearchConfig::with_theta(0.4)
        };
        let a = run_metam(&problem(&ids, &profiles, &oracle), &cfg).unwrap();
        let b = run_metam(&problem(&ids, &profiles, &oracle), &cfg).unwrap();
        assert_eq!(a.query_log, b.query_log);
        assert_eq!(a.augmentations, b.augmentations);
    }
}
