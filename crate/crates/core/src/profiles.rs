//! Data profiles: task-independent properties of a candidate augmentation,
//! each normalized to [0,1] and computed on a shared seeded row sample of
//! the input table.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discovery::{fnv1a, splitmix64, Augmentation, CandidateColumns};
use crate::error::{Error, Result};
use crate::repository::{Column, ColumnValues, DType, Repository, Table};

pub const DEFAULT_SAMPLE_SIZE: usize = 100;
pub const DEFAULT_BINS: usize = 10;
pub const SEMANTIC_BUCKETS: usize = 1024;

/// One profile value per registered profile, in registry order.
pub type ProfileVector = Vec<f64>;

/// Everything a profile may look at for one augmentation.
pub struct ProfileInput<'a> {
    pub aug: &'a Augmentation,
    /// The materialized augmentation column restricted to the sampled rows.
    pub sampled: &'a Column,
    /// Column names of the augmentation's terminal table.
    pub terminal_columns: &'a [String],
    pub session: &'a ProfileSession,
}

pub trait Profile: Send + Sync {
    fn name(&self) -> &str;
    fn compute(&self, input: &ProfileInput<'_>) -> f64;
}

/// Shared, immutable per-run profiling context: the row sample, the sampled
/// target column, and input-table summaries reused by every augmentation.
#[derive(Clone, Debug)]
pub struct ProfileSession {
    pub d_in_id: String,
    pub sample: Vec<usize>,
    pub target_name: Option<String>,
    pub target: Option<Column>,
    pub seed: u64,
    pub bins: usize,
    semantic: Vec<f64>,
    meta_tokens: BTreeSet<String>,
}

impl ProfileSession {
    /// Draws `min(sample_size, rows)` rows with `seed`. Without a declared
    /// target the first numeric column of `d_in` pairs with the augmentations.
    pub fn new(d_in: &Table, target: Option<&str>, sample_size: usize, seed: u64) -> Result<Self> {
        let n = d_in.row_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = rand::seq::index::sample(&mut rng, n, sample_size.min(n)).into_vec();
        sample.sort_unstable();
        let target_index = match target {
            Some(name) => Some(
                d_in.column_index(name)
                    .ok_or_else(|| Error::UnknownColumn(name.to_string()))?,
            ),
            None => {
                let first = d_in.columns().iter().position(|c| c.dtype() == DType::Numeric);
                match first {
                    Some(i) => log::info!("no target column declared; profiling against {}", d_in.column_name(i)),
                    None => log::info!("no target column declared and no numeric column; pairwise profiles are 0"),
                }
                first
            }
        };
        let mut text = Vec::new();
        for (i, c) in d_in.columns().iter().enumerate() {
            text.push(d_in.column_name(i));
            text.extend(sample.iter().filter_map(|&r| c.cell_text(r)));
        }
        Ok(ProfileSession {
            d_in_id: d_in.id.clone(),
            target_name: target_index.map(|i| d_in.column_name(i)),
            target: target_index.map(|i| d_in.columns()[i].take(&sample)),
            seed,
            bins: DEFAULT_BINS,
            semantic: hashed_vector(text.iter().map(String::as_str)),
            meta_tokens: metadata_tokens(&d_in.id, (0..d_in.width()).map(|i| d_in.column_name(i))),
            sample,
        })
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Feature-hashed signed token counts.
pub fn hashed_vector<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
    let mut v = vec![0.0; SEMANTIC_BUCKETS];
    for text in texts {
        for tok in tokenize(text) {
            let h = splitmix64(fnv1a(tok.as_bytes()));
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % SEMANTIC_BUCKETS as u64) as usize] += sign;
        }
    }
    v
}

/// Cosine similarity mapped to [0,1]; an empty vector gives the midpoint 0.5.
pub fn semantic_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.5;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    sanitize((dot / (na * nb) + 1.0) / 2.0)
}

fn metadata_tokens(table_id: &str, columns: impl IntoIterator<Item = String>) -> BTreeSet<String> {
    let mut set: BTreeSet<String> = tokenize(table_id).collect();
    for c in columns {
        set.extend(tokenize(&c));
    }
    set
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Numeric view of a column: categorical/text labels are encoded by order of
/// first appearance.
fn encode(col: &Column) -> Vec<Option<f64>> {
    match col.values() {
        ColumnValues::Numeric(v) => v.clone(),
        ColumnValues::Strings(v) => {
            let mut codes: HashMap<&str, f64> = HashMap::new();
            v.iter()
                .map(|s| {
                    s.as_deref().map(|s| {
                        let next = codes.len() as f64;
                        *codes.entry(s).or_insert(next)
                    })
                })
                .collect()
        }
    }
}

fn paired(x: &[Option<f64>], y: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    x.iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 3 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 1e-12 * n as f64 || syy <= 1e-12 * n as f64 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// |Pearson r| over row pairs where both cells are present.
pub fn correlation_profile(aug_col: &Column, target_col: &Column) -> f64 {
    let (x, y) = paired(&encode(aug_col), &encode(target_col));
    pearson(&x, &y).map_or(0.0, |r| sanitize(r.abs()))
}

fn discretize(col: &Column, bins: usize) -> Vec<Option<usize>> {
    match col.values() {
        ColumnValues::Numeric(v) => {
            let present = v.iter().flatten();
            let lo = present.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = present.copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / bins as f64;
            v.iter()
                .map(|x| {
                    x.map(|x| {
                        if width > 0.0 {
                            (((x - lo) / width) as usize).min(bins - 1)
                        } else {
                            0
                        }
                    })
                })
                .collect()
        }
        ColumnValues::Strings(_) => encode(col).into_iter().map(|c| c.map(|c| c as usize)).collect(),
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information over equal-width bins (categories for
/// categorical columns), normalized by the smaller marginal entropy.
/// Binning uses only rows where both cells are present.
pub fn mutual_info_profile(aug_col: &Column, target_col: &Column, bins: usize) -> f64 {
    let keep: Vec<usize> = (0..aug_col.len().min(target_col.len()))
        .filter(|&r| !aug_col.is_null(r) && !target_col.is_null(r))
        .collect();
    if keep.is_empty() {
        return 0.0;
    }
    let xs = discretize(&aug_col.take(&keep), bins.max(1));
    let ys = discretize(&target_col.take(&keep), bins.max(1));
    let n = keep.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut mx: BTreeMap<usize, usize> = BTreeMap::new();
    let mut my: BTreeMap<usize, usize> = BTreeMap::new();
    for (x, y) in xs.iter().zip(&ys) {
        let (x, y) = (x.expect("non-null"), y.expect("non-null"));
        *joint.entry((x, y)).or_default() += 1;
        *mx.entry(x).or_default() += 1;
        *my.entry(y).or_default() += 1;
    }
    let hx = entropy(mx.values().copied(), n);
    let hy = entropy(my.values().copied(), n);
    let h = hx.min(hy);
    if h <= 1e-12 {
        return 0.0;
    }
    let hxy = entropy(joint.values().copied(), n);
    sanitize((hx + hy - hxy) / h)
}

pub struct CorrelationProfile;
pub struct MutualInfoProfile;
pub struct SemanticProfile;
pub struct MetadataProfile;
pub struct OverlapProfile;

impl Profile for CorrelationProfile {
    fn name(&self) -> &str {
        "correlation"
    }

    fn compute(&self, input: &ProfileInput<'_>) -> f64 {
        input
            .session
            .target
            .as_ref()
            .map_or(0.0, |t| correlation_profile(input.sampled, t))
    }
}

impl Profile for MutualInfoProfile {
    fn name(&self) -> &str {
        "mutual_info"
    }

    fn compute(&self, input: &ProfileInput<'_>) -> f64 {
        input
            .session
            .target
            .as_ref()
            .map_or(0.0, |t| mutual_info_profile(input.sampled, t, input.session.bins))
    }
}

impl Profile for SemanticProfile {
    fn name(&self) -> &str {
        "semantic"
    }

    fn compute(&self, input: &ProfileInput<'_>) -> f64 {
        let cells: Vec<String> = (0..input.sampled.len())
            .filter_map(|r| input.sampled.cell_text(r))
            .collect();
        let v = hashed_vector(
            std::iter::once(input.aug.column_name.as_str()).chain(cells.iter().map(String::as_str)),
        );
        semantic_similarity(&v, &input.session.semantic)
    }
}

impl Profile for MetadataProfile {
    fn name(&self) -> &str {
        "metadata"
    }

    fn compute(&self, input: &ProfileInput<'_>) -> f64 {
        let tokens = metadata_tokens(input.aug.terminal_table(), input.terminal_columns.iter().cloned());
        jaccard(&tokens, &input.session.meta_tokens)
    }
}

impl Profile for OverlapProfile {
    fn name(&self) -> &str {
        "overlap"
    }

    fn compute(&self, input: &ProfileInput<'_>) -> f64 {
        let n = input.sampled.len();
        if n == 0 {
            return 0.0;
        }
        (n - input.sampled.null_count()) as f64 / n as f64
    }
}

/// Uninformative profile: a deterministic pseudo-random value per
/// (augmentation id, profile index, seed).
pub struct RandomProfile {
    name: String,
    index: u64,
}

impl RandomProfile {
    pub fn new(index: u64) -> Self {
        RandomProfile {
            name: format!("random{index}"),
            index,
        }
    }
}

impl Profile for RandomProfile {
    fn name(&self) -> &str {
        &self.name
    }

    fn compute(&self, input: &ProfileInput<'_>) -> f64 {
        let h = splitmix64(fnv1a(input.aug.id.as_bytes()) ^ splitmix64(self.index ^ splitmix64(input.session.seed)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub struct ConstantProfile {
    name: String,
    value: f64,
}

impl ConstantProfile {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        ConstantProfile {
            name: name.into(),
            value: sanitize(value),
        }
    }
}

impl Profile for ConstantProfile {
    fn name(&self) -> &str {
        &self.name
    }

    fn compute(&self, _: &ProfileInput<'_>) -> f64 {
        self.value
    }
}

pub const DEFAULT_PROFILES: [&str; 5] = ["correlation", "mutual_info", "semantic", "metadata", "overlap"];

pub struct ProfileRegistry {
    profiles: Vec<Box<dyn Profile>>,
    pub sample_size: usize,
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        ProfileRegistry::from_names(&DEFAULT_PROFILES).expect("default profile names are valid")
    }
}

impl ProfileRegistry {
    pub fn empty() -> Self {
        ProfileRegistry {
            profiles: Vec::new(),
            sample_size: DEFAULT_SAMPLE_SIZE,
        }
    }

    /// Builds a registry from names: the five defaults, `random<k>`, or
    /// `constant` (value 0.5).
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut reg = ProfileRegistry::empty();
        for name in names {
            let name = name.as_ref();
            let p: Box<dyn Profile> = match name {
                "correlation" => Box::new(CorrelationProfile),
                "mutual_info" => Box::new(MutualInfoProfile),
                "semantic" => Box::new(SemanticProfile),
                "metadata" => Box::new(MetadataProfile),
                "overlap" => Box::new(OverlapProfile),
                "constant" => Box::new(ConstantProfile::new("constant", 0.5)),
                other => match other.strip_prefix("random").and_then(|k| k.parse().ok()) {
                    Some(k) => Box::new(RandomProfile::new(k)),
                    None => return Err(Error::InvalidConfig(format!("unknown profile {other}"))),
                },
            };
            reg.register(p)?;
        }
        Ok(reg)
    }

    pub fn register(&mut self, profile: Box<dyn Profile>) -> Result<()> {
        if self.profiles.iter().any(|p| p.name() == profile.name()) {
            return Err(Error::InvalidConfig(format!("duplicate profile {}", profile.name())));
        }
        self.profiles.push(profile);
        Ok(())
    }

    /// Adds `count` random profiles after the existing ones.
    pub fn with_random(mut self, count: usize) -> Result<Self> {
        for k in 0..count {
            self.register(Box::new(RandomProfile::new(k as u64)))?;
        }
        Ok(self)
    }

    pub fn names(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.name().to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.profiles.iter().position(|p| p.name() == name)
    }

    fn evaluate(&self, input: &ProfileInput<'_>) -> ProfileVector {
        self.profiles.iter().map(|p| sanitize(p.compute(input))).collect()
    }
}

/// Profile vectors for a batch of candidates whose columns are already
/// materialized, computed in parallel against one shared session.
pub fn profile_candidates(
    augs: &[Augmentation],
    columns: &CandidateColumns,
    repo: &Repository,
    registry: &ProfileRegistry,
    session: &ProfileSession,
) -> Result<Vec<ProfileVector>> {
    if registry.is_empty() {
        return Err(Error::InvalidConfig("profile registry is empty".into()));
    }
    let mut names_by_table: HashMap<&str, Vec<String>> = HashMap::new();
    for a in augs {
        let t = a.terminal_table();
        if !names_by_table.contains_key(t) {
            let names = repo
                .get(t)
                .map(|t| (0..t.width()).map(|i| t.column_name(i)).collect())
                .unwrap_or_default();
            names_by_table.insert(t, names);
        }
    }
    Ok(augs
        .par_iter()
        .enumerate()
        .map(|(i, aug)| {
            let sampled = columns.get(i).take(&session.sample);
            registry.evaluate(&ProfileInput {
                aug,
                sampled: &sampled,
                terminal_columns: &names_by_table[aug.terminal_table()],
                session,
            })
        })
        .collect())
}

/// Profile vector for one augmentation, materializing it on the fly.
pub fn compute_profiles(
    aug: &Augmentation,
    d_in: &Table,
    repo: &Repository,
    registry: &ProfileRegistry,
    target: Option<&str>,
    seed: u64,
) -> Result<ProfileVector> {
    let session = ProfileSession::new(d_in, target, registry.sample_size, seed)?;
    let cols = CandidateColumns::build(d_in, repo, std::slice::from_ref(aug))?;
    Ok(profile_candidates(std::slice::from_ref(aug), &cols, repo, registry, &session)?.remove(0))
}

/// Sidecar cache of profile vectors, valid only for the exact key it was
/// computed under.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProfileCache {
    pub key: String,
    pub names: Vec<String>,
    pub ids: Vec<String>,
    pub vectors: Vec<ProfileVector>,
}

impl ProfileCache {
    pub fn cache_key(repo_hash: &str, d_in_hash: &str, names: &[String], sample_size: usize, seed: u64) -> String {
        format!("{repo_hash}:{d_in_hash}:{}:{sample_size}:{seed}", names.join(","))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    /// Returns the cached vectors if the file exists and matches `key` and `ids`.
    pub fn load_matching(path: &Path, key: &str, ids: &[String]) -> Option<Vec<ProfileVector>> {
        let text = fs::read_to_string(path).ok()?;
        let cache: ProfileCache = serde_json::from_str(&text).ok()?;
        (cache.key == key && cache.ids == ids).then_some(cache.vectors)
    }
}
