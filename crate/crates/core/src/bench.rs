//! Semi-synthetic instances with planted augmentations, the experiment
//! runner and its report.
//!
//! A generated repository holds one side table per candidate, each keyed on
//! the input's key column. `k_planted` tables carry independent latent
//! columns that define the target. The remaining tables are near-duplicate
//! versions of a few shared latent columns, plus one family of sparse
//! columns that are filled on a small shared subset of rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::Strategy;
use crate::discovery::{materialize, Augmentation, ColumnRef, JoinEdge, JoinPath};
use crate::error::{Error, Result};
use crate::pipeline::{prepare, run_prepared, PipelineConfig, Prepared};
use crate::repository::{Column, Repository, Table};
use crate::search::{SearchConfig, Solution};
use crate::tasks::{TaskConfig, TaskKind, UtilityTask};

pub const INPUT_ID: &str = "input.csv";
pub const KEY: &str = "key";
pub const THETA_MARGIN: f64 = 0.02;
const JITTER: f64 = 0.001;
/// Weight of input feature f0 in the target.
const INPUT_WEIGHT: f64 = 1.5;
/// Decorrelates the generator's stream from search streams with equal seeds.
const GENERATOR_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_candidates: usize,
    pub k_planted: usize,
    pub n_rows: usize,
    pub noise_sigma: f64,
    pub task_kind: TaskKind,
    pub seed: u64,
    /// Number of near-duplicate families among the unplanted tables.
    pub families: usize,
    /// Whether the first family copies an input feature.
    pub redundant_family: bool,
    /// Fraction of unplanted tables in the sparse family.
    pub sparse_fraction: f64,
    /// Fraction of rows filled in a sparse column.
    pub sparse_fill: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_candidates: 200,
            k_planted: 2,
            n_rows: 400,
            noise_sigma: 0.1,
            task_kind: TaskKind::Classification,
            seed: 0,
            families: 2,
            redundant_family: true,
            sparse_fraction: 0.0,
            sparse_fill: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.k_planted && self.k_planted <= 5 && 5 <= self.n_candidates) {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= k_planted ({}) <= 5 <= n_candidates ({})",
                self.k_planted, self.n_candidates
            )));
        }
        if self.n_rows < crate::tasks::MIN_ROWS {
            return Err(Error::InvalidConfig(format!("n_rows must be at least {}", crate::tasks::MIN_ROWS)));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        if self.task_kind == TaskKind::External {
            return Err(Error::InvalidConfig("synthetic instances use built-in tasks".into()));
        }
        if !(0.0..=1.0).contains(&self.sparse_fraction) || !(self.sparse_fill > 0.0 && self.sparse_fill <= 1.0) {
            return Err(Error::InvalidConfig("sparse fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A generated instance and everything known about its ground truth.
#[derive(Clone, Debug)]
pub struct SynthInstance {
    pub spec: SynthSpec,
    pub repo: Repository,
    pub d_in: Table,
    pub task: TaskConfig,
    /// Ids of the planted augmentations, sorted.
    pub ground_truth: Vec<String>,
    pub planted_utility: f64,
    pub theta: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn table_id(index: usize) -> String {
    format!("t{index:03}.csv")
}

/// Id of the value column of side table `table`.
pub fn planted_id(table: &str) -> String {
    Augmentation::new(
        JoinPath {
            edges: vec![JoinEdge {
                left: ColumnRef::new(INPUT_ID, 0),
                right: ColumnRef::new(table, 0),
                containment: 1.0,
            }],
        },
        1,
        "value",
    )
    .id
}

fn side_table(id: String, keys: &[String], values: Vec<Option<f64>>, rng: &mut ChaCha8Rng) -> Result<Table> {
    let mut rows: Vec<usize> = (0..keys.len()).collect();
    rows.shuffle(rng);
    Table::new(
        id,
        vec![
            Column::strings(Some(KEY.into()), crate::repository::DType::Text, rows.iter().map(|&r| Some(keys[r].clone())).collect()),
            Column::numeric(Some("value".into()), rows.iter().map(|&r| values[r]).collect()),
        ],
    )
}

/// Builds the repository, input table, task and θ for `spec`.
pub fn synth_repository(spec: &SynthSpec) -> Result<SynthInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ GENERATOR_SALT);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let n = spec.n_rows;
    let latent = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| round2(std.sample(rng))).collect() };

    let keys: Vec<String> = (0..n).map(|i| format!("k{i:05}")).collect();
    let mut slots: Vec<usize> = (0..spec.n_candidates).collect();
    slots.shuffle(&mut rng);
    let (planted_slots, rest) = slots.split_at(spec.k_planted);
    let n_sparse = if rest.len() > spec.families { (rest.len() as f64 * spec.sparse_fraction).round() as usize } else { 0 };
    let (sparse_slots, dense_slots) = rest.split_at(n_sparse.min(rest.len()));

    let mut tables = Vec::with_capacity(spec.n_candidates);
    let mut planted_values = Vec::new();
    for &s in planted_slots {
        let z = latent(&mut rng);
        tables.push(side_table(table_id(s), &keys, z.iter().map(|&v| Some(v)).collect(), &mut rng)?);
        planted_values.push(z);
    }
    // Input features; the target depends on f0 as well as on the plants.
    let f0 = latent(&mut rng);
    let f1 = latent(&mut rng);
    let families = spec.families.max(1);
    // Family 0 re-publishes f0, so it looks predictive but adds nothing.
    let family_latents: Vec<Vec<f64>> = (0..families)
        .map(|f| if f == 0 && spec.redundant_family { f0.clone() } else { latent(&mut rng) })
        .collect();
    let jitter = Normal::new(0.0, JITTER).expect("positive jitter");
    for (i, &s) in dense_slots.iter().enumerate() {
        let base = &family_latents[i % families];
        let values = base.iter().map(|&v| Some(round2(v + jitter.sample(&mut rng)))).collect();
        tables.push(side_table(table_id(s), &keys, values, &mut rng)?);
    }
    if !sparse_slots.is_empty() {
        let filled = ((n as f64 * spec.sparse_fill).ceil() as usize).clamp(1, n);
        let rows = rand::seq::index::sample(&mut rng, n, filled).into_vec();
        let base = latent(&mut rng);
        for &s in sparse_slots {
            let mut values = vec![None; n];
            for &r in &rows {
                values[r] = Some(round2(base[r] + jitter.sample(&mut rng)));
            }
            tables.push(side_table(table_id(s), &keys, values, &mut rng)?);
        }
    }

    let weights: Vec<f64> = (0..spec.k_planted)
        .map(|_| {
            let m = rng.random_range(0.5..1.5);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("positive sigma"));
    let signal: Vec<f64> = (0..n)
        .map(|r| {
            let s: f64 = INPUT_WEIGHT * f0[r] + weights.iter().zip(&planted_values).map(|(w, z)| w * z[r]).sum::<f64>();
            s + noise.map_or(0.0, |d| d.sample(&mut rng))
        })
        .collect();
    let feature = |name: &str, v: &[f64]| Column::numeric(Some(name.into()), v.iter().map(|&x| Some(x)).collect());
    let mut columns = vec![
        Column::strings(Some(KEY.into()), crate::repository::DType::Text, keys.iter().cloned().map(Some).collect()),
        feature("f0", &f0),
        feature("f1", &f1),
    ];
    let mut ground_truth: Vec<String> = planted_slots.iter().map(|&s| planted_id(&table_id(s))).collect();
    ground_truth.sort();
    let task = match spec.task_kind {
        TaskKind::Classification => {
            let labels = signal.iter().map(|&s| Some(if s > 0.0 { "pos" } else { "neg" }.to_string())).collect();
            columns.push(Column::strings(Some("target".into()), crate::repository::DType::Categorical, labels));
            TaskConfig::classification("target", spec.seed)
        }
        TaskKind::Regression => {
            columns.push(Column::numeric(Some("target".into()), signal.iter().map(|&s| Some(s)).collect()));
            TaskConfig {
                kind: TaskKind::Regression,
                ..TaskConfig::classification("target", spec.seed)
            }
        }
        TaskKind::Whatif => {
            // The planted columns are noisy functions of the updated column.
            let update: Vec<f64> = (0..n).map(|r| planted_values[0][r] + 0.5 * std.sample(&mut rng)).collect();
            columns.push(Column::numeric(Some("target".into()), update.iter().map(|&s| Some(round2(s))).collect()));
            TaskConfig {
                kind: TaskKind::Whatif,
                update_column: Some("target".into()),
                ground_truth: Some(ground_truth.clone()),
                ..TaskConfig::classification("target", spec.seed)
            }
        }
        TaskKind::External => unreachable!("rejected by validate"),
    };
    if spec.task_kind == TaskKind::Whatif {
        // Tie every planted column to the update column.
        let update: Vec<f64> = columns[3].as_numeric().expect("numeric").iter().map(|v| v.expect("dense")).collect();
        for (t, &s) in tables.iter_mut().zip(planted_slots) {
            let values = update.iter().map(|&u| Some(round2(u + 0.5 * std.sample(&mut rng)))).collect();
            *t = side_table(table_id(s), &keys, values, &mut rng)?;
        }
    }
    let d_in = Table::new(INPUT_ID, columns)?;
    tables.sort_by(|a, b| a.id.cmp(&b.id));
    let repo = Repository::from_tables("synthetic", tables);

    let planted_augs: Vec<Augmentation> = planted_slots
        .iter()
        .map(|&s| Augmentation::new(
            JoinPath {
                edges: vec![JoinEdge {
                    left: ColumnRef::new(INPUT_ID, 0),
                    right: ColumnRef::new(table_id(s), 0),
                    containment: 1.0,
                }],
            },
            1,
            "value",
        ))
        .collect();
    let informed = materialize(&d_in, &repo, &planted_augs)?;
    let planted_utility = task.build()?.utility(&informed)?;
    let theta = (planted_utility - THETA_MARGIN).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(SynthInstance {
        spec: spec.clone(),
        repo,
        d_in,
        task,
        ground_truth,
        planted_utility,
        theta,
    })
}

/// One (strategy, seed) cell of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub seed: u64,
    pub theta: f64,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// `None` when θ was never reached (infinite).
    pub queries_to_theta: Option<usize>,
    pub queries: usize,
    pub solution: Vec<String>,
    pub utility: f64,
    pub reached: bool,
    pub wall_seconds: f64,
    pub curve: Vec<(usize, f64)>,
    pub accepted_trajectory: Vec<f64>,
}

impl RunRecord {
    pub fn from_solution(strategy: Strategy, seed: u64, theta: f64, sol: &Solution, wall: f64) -> Self {
        RunRecord {
            strategy: strategy.name().into(),
            seed,
            theta,
            failed: sol.error.is_some(),
            error: sol.error.clone(),
            queries_to_theta: sol.queries_to_theta(),
            queries: sol.queries,
            solution: sol.augmentations.clone(),
            utility: sol.utility,
            reached: sol.reached,
            wall_seconds: wall,
            curve: sol.curve(),
            accepted_trajectory: sol.accepted_trajectory.clone(),
        }
    }

    fn failure(strategy: Strategy, seed: u64, theta: f64, err: &Error, wall: f64) -> Self {
        RunRecord {
            strategy: strategy.name().into(),
            seed,
            theta,
            failed: true,
            error: Some(err.to_string()),
            queries_to_theta: None,
            queries: 0,
            solution: Vec::new(),
            utility: f64::NAN,
            reached: false,
            wall_seconds: wall,
            curve: Vec::new(),
            accepted_trajectory: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub failed: usize,
    pub reached: usize,
    /// Median over runs, unreached runs counting as infinite; `None` is ∞.
    pub median_queries_to_theta: Option<f64>,
    pub median_solution_size: f64,
    pub mean_wall_seconds: f64,
    /// Per query index: (index, median, min, max) of best utility so far.
    pub curve: Vec<(usize, f64, f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<StrategySummary>,
}

/// Median with `None` as +∞; `None` when the median itself is infinite.
pub fn median_with_infinity(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.map_or(f64::INFINITY, |q| q as f64)).collect();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let med = if m % 2 == 1 { v[m / 2] } else { (v[m / 2 - 1] + v[m / 2]) / 2.0 };
    med.is_finite().then_some(med)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 { v[m / 2] } else { (v[m / 2 - 1] + v[m / 2]) / 2.0 }
}

impl Report {
    pub fn from_runs(seeds: Vec<u64>, runs: Vec<RunRecord>) -> Self {
        let mut by: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
        for r in &runs {
            by.entry(r.strategy.clone()).or_default().push(r);
        }
        let summaries = by
            .into_iter()
            .map(|(strategy, rs)| {
                let ok: Vec<&&RunRecord> = rs.iter().filter(|r| !r.failed).collect();
                let len = ok.iter().map(|r| r.curve.len()).max().unwrap_or(0);
                let curve = (0..len)
                    .map(|i| {
                        let vals: Vec<f64> = ok
                            .iter()
                            .filter_map(|r| r.curve.get(i).or(r.curve.last()).map(|c| c.1))
                            .collect();
                        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        (i + 1, median(vals), lo, hi)
                    })
                    .collect();
                StrategySummary {
                    runs: rs.len(),
                    failed: rs.iter().filter(|r| r.failed).count(),
                    reached: rs.iter().filter(|r| r.reached).count(),
                    median_queries_to_theta: median_with_infinity(&rs.iter().map(|r| r.queries_to_theta).collect::<Vec<_>>()),
                    median_solution_size: median(ok.iter().map(|r| r.solution.len() as f64).collect()),
                    mean_wall_seconds: rs.iter().map(|r| r.wall_seconds).sum::<f64>() / rs.len() as f64,
                    curve,
                    strategy,
                }
            })
            .collect();
        Report { seeds, runs, summaries }
    }

    pub fn summary(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy.name())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat `strategy,seed,query_index,utility` rows of best-so-far curves.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("strategy,seed,query_index,utility\n");
        for r in &self.runs {
            for (i, u) in &r.curve {
                let _ = writeln!(out, "{},{},{},{}", r.strategy, r.seed, i, u);
            }
        }
        out
    }
}

/// Runs every strategy for every seed against one prepared instance,
/// in parallel across cells.
pub fn run_experiment(
    d_in: &Table,
    prepared: &Prepared,
    task: &dyn UtilityTask,
    strategies: &[Strategy],
    config: &SearchConfig,
    seeds: &[u64],
) -> Result<Report> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("experiments need at least one strategy and one seed".into()));
    }
    let cells: Vec<(Strategy, u64)> = seeds
        .iter()
        .flat_map(|&s| strategies.iter().map(move |&st| (st, s)))
        .collect();
    let runs = cells
        .par_iter()
        .map(|&(strategy, seed)| run_cell(strategy, seed, d_in, prepared, task, config))
        .collect();
    Ok(Report::from_runs(seeds.to_vec(), runs))
}

fn run_cell(strategy: Strategy, seed: u64, d_in: &Table, prepared: &Prepared, task: &dyn UtilityTask, config: &SearchConfig) -> RunRecord {
    let cfg = SearchConfig {
        seed,
        ..config.clone()
    };
    let t = Instant::now();
    match run_prepared(strategy, d_in, prepared, task, &cfg) {
        Ok(sol) => RunRecord::from_solution(strategy, seed, cfg.theta, &sol, t.elapsed().as_secs_f64()),
        Err(e) => RunRecord::failure(strategy, seed, cfg.theta, &e, t.elapsed().as_secs_f64()),
    }
}

/// Generated instance prepared for search.
pub struct PreparedInstance {
    pub instance: SynthInstance,
    pub prepared: Prepared,
    pub task: Box<dyn UtilityTask>,
}

impl PreparedInstance {
    pub fn new(spec: &SynthSpec, pipeline: &PipelineConfig) -> Result<Self> {
        let instance = synth_repository(spec)?;
        let task = instance.task.build()?;
        let prepared = prepare(&instance.d_in, &instance.repo, task.target_column(), pipeline)?;
        Ok(PreparedInstance { instance, prepared, task })
    }

    pub fn search_config(&self, base: &SearchConfig) -> SearchConfig {
        SearchConfig {
            theta: self.instance.theta,
            ..base.clone()
        }
    }
}

/// Seed `s` generates the instance with spec seed `spec.seed + s` and runs
/// every strategy on it with search seed `s`.
pub fn run_synthetic_benchmark(
    spec: &SynthSpec,
    pipeline: &PipelineConfig,
    strategies: &[Strategy],
    config: &SearchConfig,
    seeds: &[u64],
) -> Result<Report> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("experiments need at least one strategy and one seed".into()));
    }
    let per_seed: Vec<Vec<RunRecord>> = seeds
        .par_iter()
        .map(|&s| {
            let spec = SynthSpec {
                seed: spec.seed.wrapping_add(s),
                ..spec.clone()
            };
            match PreparedInstance::new(&spec, pipeline) {
                Ok(p) => {
                    let cfg = p.search_config(config);
                    strategies
                        .par_iter()
                        .map(|&st| run_cell(st, s, &p.instance.d_in, &p.prepared, p.task.as_ref(), &cfg))
                        .collect()
                }
                Err(e) => strategies.iter().map(|&st| RunRecord::failure(st, s, f64::NAN, &e, 0.0)).collect(),
            }
        })
        .collect();
    Ok(Report::from_runs(seeds.to_vec(), per_seed.into_iter().flatten().collect()))
}
