//! Left-join materialization of augmentations onto the input table.
//!
//! Each base row follows the join chain to the set of terminal rows it
//! reaches (deduplicated); the projected column is then aggregated over those
//! rows: mean for numeric columns, mode with lexicographic tie-break for
//! categorical and text columns. Rows reaching nothing get null.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::{Augmentation, ColumnRef, JoinPath};
use crate::error::{Error, Result};
use crate::repository::{Column, ColumnValues, Repository, Table};

type KeyIndex = HashMap<String, Vec<usize>>;

fn key_index(col: &Column) -> KeyIndex {
    let mut map: KeyIndex = HashMap::new();
    for r in 0..col.len() {
        if let Some(k) = col.normalized_key(r) {
            map.entry(k).or_default().push(r);
        }
    }
    map
}

fn resolve<'a>(base: &'a Table, repo: &'a Repository, r: &ColumnRef) -> Result<&'a Column> {
    let table = if r.table == base.id {
        Some(base)
    } else {
        repo.get(&r.table)
    };
    table
        .and_then(|t| t.column(r.column))
        .ok_or_else(|| Error::KeyColumnMissing {
            table: r.table.clone(),
            column: r.column,
        })
}

/// For every base row, the sorted distinct terminal-table rows it reaches.
fn reach(
    base: &Table,
    repo: &Repository,
    path: &JoinPath,
    indexes: &HashMap<ColumnRef, KeyIndex>,
) -> Result<Vec<Vec<usize>>> {
    let first = path.edges.first().ok_or_else(|| Error::InvalidConfig("empty join path".into()))?;
    let base_key = resolve(base, repo, &first.left)?;
    let mut current: Vec<Vec<usize>> = (0..base.row_count()).map(|r| vec![r]).collect();
    let mut current_col = base_key;
    for (hop, edge) in path.edges.iter().enumerate() {
        if hop > 0 {
            current_col = resolve(base, repo, &edge.left)?;
        }
        resolve(base, repo, &edge.right)?;
        let index = &indexes[&edge.right];
        let mut cache: HashMap<usize, &[usize]> = HashMap::new();
        current = current
            .into_iter()
            .map(|rows| {
                let mut out: Vec<usize> = Vec::new();
                for r in rows {
                    let hit = *cache.entry(r).or_insert_with(|| {
                        current_col
                            .normalized_key(r)
                            .and_then(|k| index.get(&k))
                            .map(Vec::as_slice)
                            .unwrap_or(&[])
                    });
                    out.extend_from_slice(hit);
                }
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect();
    }
    Ok(current)
}

fn aggregate(source: &Column, reached: &[Vec<usize>], name: String) -> Column {
    match source.values() {
        ColumnValues::Numeric(v) => Column::numeric(
            Some(name),
            reached
                .iter()
                .map(|rows| {
                    let vals: Vec<f64> = rows.iter().filter_map(|&r| v[r]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect(),
        ),
        ColumnValues::Strings(v) => Column::strings(
            Some(name),
            source.dtype(),
            reached
                .iter()
                .map(|rows| {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for s in rows.iter().filter_map(|&r| v[r].as_deref()) {
                        *counts.entry(s).or_default() += 1;
                    }
                    // BTreeMap iterates lexicographically; keep the first maximum.
                    let mut best: Option<(&str, usize)> = None;
                    for (s, c) in counts {
                        if best.is_none_or(|(_, bc)| c > bc) {
                            best = Some((s, c));
                        }
                    }
                    best.map(|(s, _)| s.to_string())
                })
                .collect(),
        ),
    }
}

fn build_indexes<'a>(
    base: &Table,
    repo: &Repository,
    paths: impl Iterator<Item = &'a JoinPath>,
) -> Result<HashMap<ColumnRef, KeyIndex>> {
    let mut refs: Vec<ColumnRef> = paths.flat_map(|p| p.edges.iter().map(|e| e.right.clone())).collect();
    refs.sort();
    refs.dedup();
    refs.into_par_iter()
        .map(|r| {
            let col = resolve(base, repo, &r)?;
            Ok((r, key_index(col)))
        })
        .collect()
}

/// The appended column for one augmentation, row-aligned with `base` and
/// named by the augmentation id.
pub fn materialize_column(base: &Table, repo: &Repository, aug: &Augmentation) -> Result<Column> {
    let indexes = build_indexes(base, repo, std::iter::once(&aug.path))?;
    let reached = reach(base, repo, &aug.path, &indexes)?;
    let terminal = repo.get(aug.terminal_table()).ok_or_else(|| Error::KeyColumnMissing {
        table: aug.terminal_table().to_string(),
        column: aug.column_index,
    })?;
    let source = terminal.column(aug.column_index).ok_or_else(|| Error::KeyColumnMissing {
        table: terminal.id.clone(),
        column: aug.column_index,
    })?;
    Ok(aggregate(source, &reached, aug.id.clone()))
}

/// Γ(base, augs): `base` with one appended column per augmentation, in the
/// given order. An empty set returns `base` unchanged.
pub fn materialize(base: &Table, repo: &Repository, augs: &[Augmentation]) -> Result<Table> {
    let cols = CandidateColumns::build(base, repo, augs)?;
    Ok(cols.augment(base, &(0..augs.len()).collect::<Vec<_>>()))
}

/// Materialized columns for a fixed candidate list, computed once so that
/// evaluating any subset only clones columns.
#[derive(Clone, Debug)]
pub struct CandidateColumns {
    columns: Vec<Column>,
}

impl CandidateColumns {
    pub fn build(base: &Table, repo: &Repository, augs: &[Augmentation]) -> Result<Self> {
        let indexes = build_indexes(base, repo, augs.iter().map(|a| &a.path))?;
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, a) in augs.iter().enumerate() {
            groups.entry(a.path.to_string()).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = groups.into_values().collect();
        let built: Vec<Vec<(usize, Column)>> = groups
            .par_iter()
            .map(|members| {
                let path = &augs[members[0]].path;
                let reached = reach(base, repo, path, &indexes)?;
                members
                    .iter()
                    .map(|&i| {
                        let aug = &augs[i];
                        let source = repo
                            .get(aug.terminal_table())
                            .and_then(|t| t.column(aug.column_index))
                            .ok_or_else(|| Error::KeyColumnMissing {
                                table: aug.terminal_table().to_string(),
                                column: aug.column_index,
                            })?;
                        Ok((i, aggregate(source, &reached, aug.id.clone())))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut columns: Vec<Option<Column>> = vec![None; augs.len()];
        for (i, c) in built.into_iter().flatten() {
            columns[i] = Some(c);
        }
        Ok(CandidateColumns {
            columns: columns.into_iter().map(|c| c.expect("every candidate materialized")).collect(),
        })
    }

    pub fn from_columns(columns: Vec<Column>) -> Self {
        CandidateColumns { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn get(&self, i: usize) -> &Column {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// `base` plus the columns of `subset`, appended in the given order.
    pub fn augment(&self, base: &Table, subset: &[usize]) -> Table {
        let mut t = base.clone();
        for &i in subset {
            t.push_column(self.columns[i].clone())
                .expect("materialized columns are row-aligned with the base table");
        }
        t
    }
}
