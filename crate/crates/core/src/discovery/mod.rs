//! Candidate generation: join paths from the input table into the
//! repository, and the single-column augmentations they yield.

mod index;
mod materialize;

pub use index::{
    build_join_index, build_join_index_with, containment_from_jaccard, estimate_jaccard,
    exact_containment, is_key_eligible, sketch_column, sketch_containment, ColumnSketch,
    JoinIndex, MinHasher, TableMeta, DEFAULT_EXACT_LIMIT, DEFAULT_SIGNATURE_SIZE,
};
pub use materialize::{materialize, materialize_column, CandidateColumns};

#[allow(unused_imports)]
pub(crate) use index::{fnv1a, splitmix64};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::repository::Table;

pub const DEFAULT_CONTAINMENT_THRESHOLD: f64 = 0.6;
pub const DEFAULT_MAX_HOPS: usize = 2;

/// A column reference: (table id, column index).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: usize,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: usize) -> Self {
        ColumnRef {
            table: table.into(),
            column,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: ColumnRef,
    pub right: ColumnRef,
    pub containment: f64,
}

/// Chain of joins starting at the input table: the right table of each edge
/// is the left table of the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinPath {
    pub edges: Vec<JoinEdge>,
}

impl JoinPath {
    pub fn terminal_table(&self) -> &str {
        &self.edges.last().expect("non-empty join path").right.table
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_chain(&self) -> bool {
        self.edges
            .windows(2)
            .all(|w| w[0].right.table == w[1].left.table)
    }
}

impl fmt::Display for JoinPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.edges.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{}>{}:{}", e.left.column, e.right.table, e.right.column)?;
        }
        Ok(())
    }
}

/// One new column: the `column_index`-th column of the path's terminal table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub id: String,
    pub path: JoinPath,
    pub column_index: usize,
    pub column_name: String,
}

impl Augmentation {
    pub fn new(path: JoinPath, column_index: usize, column_name: impl Into<String>) -> Self {
        let id = format!("{path}#{column_index}");
        Augmentation {
            id,
            path,
            column_index,
            column_name: column_name.into(),
        }
    }

    pub fn terminal_table(&self) -> &str {
        self.path.terminal_table()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub containment_threshold: f64,
    pub max_hops: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            containment_threshold: DEFAULT_CONTAINMENT_THRESHOLD,
            max_hops: DEFAULT_MAX_HOPS,
        }
    }
}

/// Enumerates every augmentation reachable from `d_in` over simple join
/// chains of at most `max_hops` edges whose containments all reach
/// `threshold`. A chain leaves an intermediate table through a column other
/// than the one it entered on, and never revisits a table. Returns the
/// augmentations sorted by id; an empty result means no candidates.
pub fn generate_candidates(
    d_in: &Table,
    index: &JoinIndex,
    threshold: f64,
    max_hops: usize,
) -> Vec<Augmentation> {
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold must be in (0, 1]");
    let mut out = Vec::new();
    if max_hops == 0 {
        return out;
    }
    let starts: Vec<(usize, ColumnSketch)> = d_in
        .columns()
        .iter()
        .enumerate()
        .filter(|(_, c)| is_key_eligible(c))
        .map(|(i, c)| (i, index.sketch_column(c)))
        .collect();
    for (col, sketch) in &starts {
        let left = ColumnRef::new(d_in.id.clone(), *col);
        let mut visited = vec![d_in.id.clone()];
        extend_paths(index, &left, sketch, threshold, max_hops, &mut Vec::new(), &mut visited, &mut out);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out.dedup_by(|a, b| a.id == b.id);
    out
}

#[allow(clippy::too_many_arguments)]
fn extend_paths(
    index: &JoinIndex,
    left: &ColumnRef,
    left_sketch: &ColumnSketch,
    threshold: f64,
    hops_left: usize,
    edges: &mut Vec<JoinEdge>,
    visited: &mut Vec<String>,
    out: &mut Vec<Augmentation>,
) {
    for ((table, column), sketch) in &index.columns {
        if visited.iter().any(|v| v == table) {
            continue;
        }
        let containment = index.containment(left_sketch, sketch);
        if containment < threshold {
            continue;
        }
        let right = ColumnRef::new(table.clone(), *column);
        edges.push(JoinEdge {
            left: left.clone(),
            right: right.clone(),
            containment,
        });
        let path = JoinPath { edges: edges.clone() };
        if let Some(meta) = index.tables.get(table) {
            for (j, name) in meta.column_names.iter().enumerate() {
                if j != *column {
                    out.push(Augmentation::new(path.clone(), j, name.clone()));
                }
            }
        }
        if hops_left > 1 {
            visited.push(table.clone());
            let exits: Vec<(&(String, usize), &ColumnSketch)> = index
                .columns
                .iter()
                .filter(|((t, c), _)| t == table && c != column)
                .map(|(k, s)| (k, s))
                .collect();
            for ((t, c), s) in exits {
                extend_paths(index, &ColumnRef::new(t.clone(), *c), s, threshold, hops_left - 1, edges, visited, out);
            }
            visited.pop();
        }
        edges.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repository::{Column, DType, Repository};
    use std::collections::BTreeSet;

    fn keys(prefix: &str, range: std::ops::Range<usize>) -> Column {
        Column::strings(
            Some(format!("{prefix}key")),
            DType::Text,
            range.map(|i| Some(format!("{prefix}{i}"))).collect(),
        )
    }

    fn nums(name: &str, n: usize) -> Column {
        Column::numeric(Some(name.into()), (0..n).map(|i| Some(i as f64 + 0.5)).collect())
    }

    fn table(id: &str, cols: Vec<Column>) -> Table {
        Table::new(id, cols).unwrap()
    }

    /// d_in(zip) → t1(zip, city, pop) → t2(city, mayor) plus an unrelated t3.
    fn fixture() -> (Table, Repository) {
        let zips = |r: std::ops::Range<usize>| {
            Column::strings(Some("zip".into()), DType::Text, r.map(|i| Some(format!("z{i}"))).collect())
        };
        let cities = |r: std::ops::Range<usize>| {
            Column::strings(Some("city".into()), DType::Text, r.map(|i| Some(format!("city{}", i % 30))).collect())
        };
        let d_in = table("d_in.csv", vec![zips(0..40), nums("x", 40)]);
        let t1 = table("t1.csv", vec![zips(0..50), cities(0..50), nums("pop", 50)]);
        let t2 = table(
            "t2.csv",
            vec![
                Column::strings(Some("city".into()), DType::Text, (0..30).map(|i| Some(format!("city{i}"))).collect()),
                nums("mayor_age", 30),
            ],
        );
        let t3 = table("t3.csv", vec![keys("q", 0..20), nums("w", 20)]);
        (d_in, Repository::from_tables("", vec![t1, t2, t3]))
    }

    #[test]
    fn fully_contained_key_yields_non_key_columns() {
        let (d_in, repo) = fixture();
        let index = build_join_index(&repo, 64);
        let cands = generate_candidates(&d_in, &index, 0.6, 1);
        let names: Vec<&str> = cands.iter().map(|a| a.column_name.as_str()).collect();
        assert_eq!(names, ["city", "pop"]);
        assert!(cands.iter().all(|a| a.terminal_table() == "t1.csv"));
    }

    #[test]
    fn no_candidate_when_nothing_joins() {
        let (_, repo) = fixture();
        let lonely = table("d.csv", vec![keys("nope", 0..10), nums("x", 10)]);
        let index = build_join_index(&repo, 64);
        assert!(generate_candidates(&lonely, &index, 0.6, 2).is_empty());
    }

    /// Brute-force chain enumeration over all ordered table sequences.
    fn brute_force_ids(d_in: &Table, repo: &Repository, threshold: f64, max_hops: usize) -> BTreeSet<String> {
        let contain = |a: &Column, b: &Column| {
            let sa: std::collections::HashSet<String> = (0..a.len()).filter_map(|r| a.normalized_key(r)).collect();
            let sb: std::collections::HashSet<String> = (0..b.len()).filter_map(|r| b.normalized_key(r)).collect();
            exact_containment(&sa, &sb)
        };
        let mut out = BTreeSet::new();
        let tables: Vec<&Table> = repo.tables.values().collect();
        // (current table, entry column, path so far, visited)
        let mut frontier: Vec<(&Table, Option<usize>, Vec<JoinEdge>)> = vec![(d_in, None, vec![])];
        for _ in 0..max_hops {
            let mut next = Vec::new();
            for (cur, entry, path) in &frontier {
                for (lc, lcol) in cur.columns().iter().enumerate() {
                    if Some(lc) == *entry || !is_key_eligible(lcol) {
                        continue;
                    }
                    for t in &tables {
                        if t.id == d_in.id || path.iter().any(|e| e.right.table == t.id) {
                            continue;
                        }
                        for (rc, rcol) in t.columns().iter().enumerate() {
                            if !is_key_eligible(rcol) {
                                continue;
                            }
                            let c = contain(lcol, rcol);
                            if c < threshold {
                                continue;
                            }
                            let mut p = path.clone();
                            p.push(JoinEdge { left: ColumnRef::new(cur.id.clone(), lc), right: ColumnRef::new(t.id.clone(), rc), containment: c });
                            let jp = JoinPath { edges: p.clone() };
                            for j in 0..t.width() {
                                if j != rc {
                                    out.insert(Augmentation::new(jp.clone(), j, t.column_name(j)).id);
                                }
                            }
                            next.push((*t, Some(rc), p));
                        }
                    }
                }
            }
            frontier = next;
        }
        out
    }

    #[test]
    fn two_hop_chain_matches_brute_force() {
        let (d_in, repo) = fixture();
        let index = build_join_index(&repo, 64);
        let got: BTreeSet<String> = generate_candidates(&d_in, &index, 0.6, 2).into_iter().map(|a| a.id).collect();
        let expected = brute_force_ids(&d_in, &repo, 0.6, 2);
        assert_eq!(got, expected);
        assert!(got.iter().any(|id| id.contains("t2.csv")), "{got:?}");
    }

    #[test]
    fn paths_are_chains_within_hop_limit() {
        let (d_in, repo) = fixture();
        let index = build_join_index(&repo, 64);
        for a in generate_candidates(&d_in, &index, 0.5, 2) {
            assert!(a.path.is_chain());
            assert!(a.path.len() <= 2);
            assert_eq!(a.path.edges[0].left.table, "d_in.csv");
            assert_ne!(a.column_index, a.path.edges.last().unwrap().right.column);
        }
    }

    #[test]
    fn sketch_decisions_agree_with_exact() {
        use rand::seq::index::sample;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let hasher = MinHasher::new(DEFAULT_SIGNATURE_SIZE);
        let col = |idx: Vec<usize>| {
            Column::strings(None, DType::Text, idx.into_iter().map(|i| Some(format!("v{i}"))).collect())
        };
        let trials = 300;
        let mut agree = 0;
        for _ in 0..trials {
            let universe = rng.random_range(100..900);
            let na = rng.random_range(20..=512.min(universe));
            let nb = rng.random_range(20..=512.min(universe));
            let a = sketch_column(&hasher, DEFAULT_EXACT_LIMIT, &col(sample(&mut rng, universe, na).into_vec()));
            let b = sketch_column(&hasher, DEFAULT_EXACT_LIMIT, &col(sample(&mut rng, universe, nb).into_vec()));
            let exact = exact_containment(a.exact_values().unwrap(), b.exact_values().unwrap());
            let approx = sketch_containment(&a, &b);
            if (exact >= DEFAULT_CONTAINMENT_THRESHOLD) == (approx >= DEFAULT_CONTAINMENT_THRESHOLD) {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.95 * trials as f64, "{agree}/{trials}");
    }

    #[test]
    fn raising_threshold_never_adds_candidates() {
        let (d_in, repo) = fixture();
        let index = build_join_index(&repo, 64);
        let mut prev: Option<BTreeSet<String>> = None;
        for t in [0.1, 0.3, 0.6, 0.8, 0.95, 1.0] {
            let cur: BTreeSet<String> = generate_candidates(&d_in, &index, t, 2).into_iter().map(|a| a.id).collect();
            if let Some(p) = &prev {
                assert!(cur.is_subset(p), "threshold {t} added candidates");
            }
            prev = Some(cur);
        }
    }
}
