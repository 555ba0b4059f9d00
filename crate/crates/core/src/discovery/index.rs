//! Containment index over join-key candidate columns.
//!
//! Each eligible column keeps a fixed-size min-hash signature of its
//! normalized distinct values. Columns with few distinct values additionally
//! keep the exact value set, and containment between two such columns is
//! computed exactly.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repository::{Column, DType, Repository, Table};

pub const DEFAULT_SIGNATURE_SIZE: usize = 256;
pub const DEFAULT_EXACT_LIMIT: usize = 512;
pub const INDEX_FORMAT_VERSION: u32 = 1;

const SEED_STREAM: u64 = 0x5eed_cafe_f00d_d00d;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Min-hash signature generator with `size` independent hash functions.
#[derive(Clone, Debug)]
pub struct MinHasher {
    seeds: Vec<u64>,
}

impl MinHasher {
    pub fn new(size: usize) -> Self {
        let mut state = SEED_STREAM;
        let seeds = (0..size.max(1))
            .map(|_| {
                state = splitmix64(state);
                state
            })
            .collect();
        MinHasher { seeds }
    }

    pub fn size(&self) -> usize {
        self.seeds.len()
    }

    pub fn signature<'a>(&self, values: impl IntoIterator<Item = &'a str>) -> Vec<u64> {
        let mut sig = vec![u64::MAX; self.seeds.len()];
        for v in values {
            let base = fnv1a(v.as_bytes());
            for (slot, seed) in sig.iter_mut().zip(&self.seeds) {
                let h = splitmix64(base ^ seed);
                if h < *slot {
                    *slot = h;
                }
            }
        }
        sig
    }
}

/// Jaccard estimate: fraction of agreeing signature slots.
pub fn estimate_jaccard(a: &[u64], b: &[u64]) -> f64 {
    if a.is_empty() || a.len() != b.len() {
        return 0.0;
    }
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    agree as f64 / a.len() as f64
}

/// Containment |A∩B|/|A| from a Jaccard estimate and the two set sizes.
pub fn containment_from_jaccard(jaccard: f64, size_a: usize, size_b: usize) -> f64 {
    if size_a == 0 {
        return 0.0;
    }
    let c = jaccard * (size_a + size_b) as f64 / ((1.0 + jaccard) * size_a as f64);
    c.clamp(0.0, 1.0)
}

/// Exact directional containment |A∩B|/|A|.
pub fn exact_containment(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().filter(|v| b.contains(*v)).count() as f64 / a.len() as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnSketch {
    pub distinct: usize,
    pub signature: Vec<u64>,
    /// Sorted distinct values, kept when `distinct` is within the exact limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<Vec<String>>,
    #[serde(skip)]
    exact_set: Option<HashSet<String>>,
}

impl ColumnSketch {
    fn finish(mut self) -> Self {
        self.exact_set = self.exact.as_ref().map(|v| v.iter().cloned().collect());
        self
    }

    pub fn exact_values(&self) -> Option<&HashSet<String>> {
        self.exact_set.as_ref()
    }
}

/// Columns that may act as join keys: categorical/text, or integral numeric
/// (identifier-like codes such as zip codes), with at least two distinct values.
pub fn is_key_eligible(col: &Column) -> bool {
    if col.distinct_count() < 2 {
        return false;
    }
    match col.dtype() {
        DType::Categorical | DType::Text => true,
        DType::Numeric => col.is_integral(),
    }
}

pub(crate) fn normalized_distinct(col: &Column) -> Vec<String> {
    let mut set: Vec<String> = (0..col.len())
        .filter_map(|r| col.normalized_key(r))
        .filter(|s| !s.is_empty())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    set.sort();
    set
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TableMeta {
    pub column_names: Vec<String>,
    pub dtypes: Vec<DType>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JoinIndex {
    pub version: u32,
    pub repository_hash: String,
    pub signature_size: usize,
    pub exact_limit: usize,
    pub tables: BTreeMap<String, TableMeta>,
    /// (table id, column index) → sketch, ordered for deterministic scans.
    pub columns: Vec<((String, usize), ColumnSketch)>,
    #[serde(skip)]
    hasher: Option<MinHasher>,
}

impl JoinIndex {
    pub fn hasher(&self) -> MinHasher {
        self.hasher
            .clone()
            .unwrap_or_else(|| MinHasher::new(self.signature_size))
    }

    pub fn sketch_column(&self, col: &Column) -> ColumnSketch {
        sketch_column(&self.hasher(), self.exact_limit, col)
    }

    pub fn sketch(&self, table: &str, column: usize) -> Option<&ColumnSketch> {
        self.columns
            .binary_search_by(|((t, c), _)| (t.as_str(), *c).cmp(&(table, column)))
            .ok()
            .map(|i| &self.columns[i].1)
    }

    /// Containment of `left` in `right`; exact when both value sets are kept.
    pub fn containment(&self, left: &ColumnSketch, right: &ColumnSketch) -> f64 {
        match (left.exact_values(), right.exact_values()) {
            (Some(a), Some(b)) => exact_containment(a, b),
            _ => sketch_containment(left, right),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut index: JoinIndex = serde_json::from_str(&text)?;
        if index.version != INDEX_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "index format version {} is not supported",
                index.version
            )));
        }
        index.columns = index
            .columns
            .into_iter()
            .map(|(k, s)| (k, s.finish()))
            .collect();
        index.hasher = Some(MinHasher::new(index.signature_size));
        Ok(index)
    }
}

/// Sketch-only containment estimate, ignoring any exact sets.
pub fn sketch_containment(left: &ColumnSketch, right: &ColumnSketch) -> f64 {
    let j = estimate_jaccard(&left.signature, &right.signature);
    containment_from_jaccard(j, left.distinct, right.distinct)
}

pub fn sketch_column(hasher: &MinHasher, exact_limit: usize, col: &Column) -> ColumnSketch {
    let values = normalized_distinct(col);
    let signature = hasher.signature(values.iter().map(String::as_str));
    let distinct = values.len();
    ColumnSketch {
        distinct,
        signature,
        exact: (distinct <= exact_limit).then_some(values),
        exact_set: None,
    }
    .finish()
}

fn table_meta(table: &Table) -> TableMeta {
    TableMeta {
        column_names: (0..table.width()).map(|i| table.column_name(i)).collect(),
        dtypes: table.columns().iter().map(Column::dtype).collect(),
    }
}

pub fn build_join_index(repo: &Repository, signature_size: usize) -> JoinIndex {
    build_join_index_with(repo, signature_size, DEFAULT_EXACT_LIMIT)
}

pub fn build_join_index_with(repo: &Repository, signature_size: usize, exact_limit: usize) -> JoinIndex {
    let hasher = MinHasher::new(signature_size);
    let keys: Vec<(&Table, usize)> = repo
        .tables
        .values()
        .flat_map(|t| {
            t.columns()
                .iter()
                .enumerate()
                .filter(|(_, c)| is_key_eligible(c))
                .map(move |(i, _)| (t, i))
        })
        .collect();
    let columns: Vec<((String, usize), ColumnSketch)> = keys
        .par_iter()
        .map(|(t, i)| {
            (
                (t.id.clone(), *i),
                sketch_column(&hasher, exact_limit, &t.columns()[*i]),
            )
        })
        .collect();
    JoinIndex {
        version: INDEX_FORMAT_VERSION,
        repository_hash: repo.content_hash(),
        signature_size: hasher.size(),
        exact_limit,
        tables: repo
            .tables
            .iter()
            .map(|(id, t)| (id.clone(), table_meta(t)))
            .collect(),
        columns,
        hasher: Some(hasher),
    }
}
