//! What-if proxy: which columns depend on the updated column, scored
//! against a known set of truly affected columns.

use std::collections::{BTreeSet, HashMap};

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use super::{TaskResult, UtilityTask};
use crate::error::{Error, Result};
use crate::profiles::pearson;
use crate::repository::{Column, ColumnValues, DType, Table};

pub const DEFAULT_ALPHA: f64 = 0.05;
const CHI_BINS: usize = 5;

/// Two-sided p-value of the Pearson correlation t-test.
pub fn pearson_p_value(x: &[f64], y: &[f64]) -> Option<f64> {
    let r = pearson(x, y)?;
    let n = x.len() as f64;
    if n < 4.0 {
        return None;
    }
    let r2 = (r * r).min(1.0);
    if r2 >= 1.0 - 1e-15 {
        return Some(0.0);
    }
    let t = r * ((n - 2.0) / (1.0 - r2)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 2.0).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

fn categories(col: &Column, rows: &[usize]) -> Vec<usize> {
    match col.values() {
        ColumnValues::Numeric(v) => {
            let vals: Vec<f64> = rows.iter().map(|&r| v[r].expect("filtered")).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w = (hi - lo) / CHI_BINS as f64;
            vals.iter()
                .map(|x| if w > 0.0 { (((x - lo) / w) as usize).min(CHI_BINS - 1) } else { 0 })
                .collect()
        }
        ColumnValues::Strings(v) => {
            let mut code: HashMap<&str, usize> = HashMap::new();
            rows.iter()
                .map(|&r| {
                    let s = v[r].as_deref().expect("filtered");
                    let next = code.len();
                    *code.entry(s).or_insert(next)
                })
                .collect()
        }
    }
}

/// Chi-square independence p-value on a contingency table of binned values.
pub fn chi_square_p_value(a: &[usize], b: &[usize]) -> Option<f64> {
    let ka = a.iter().max()? + 1;
    let kb = b.iter().max()? + 1;
    let mut table = vec![vec![0.0; kb]; ka];
    for (x, y) in a.iter().zip(b) {
        table[*x][*y] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let nr = rows.iter().filter(|&&s| s > 0.0).count();
    let nc = cols.iter().filter(|&&s| s > 0.0).count();
    if nr < 2 || nc < 2 {
        return None;
    }
    let n = a.len() as f64;
    let mut stat = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                stat += (table[i][j] - e).powi(2) / e;
            }
        }
    }
    let dof = ((nr - 1) * (nc - 1)) as f64;
    let dist = ChiSquared::new(dof).ok()?;
    Some((1.0 - dist.cdf(stat)).clamp(0.0, 1.0))
}

/// p-value for dependence between two columns, or `None` when untestable.
pub fn dependence_p_value(a: &Column, b: &Column) -> Option<f64> {
    let rows: Vec<usize> = (0..a.len().min(b.len()))
        .filter(|&r| !a.is_null(r) && !b.is_null(r))
        .collect();
    if rows.len() < 4 || a.dtype() == DType::Text || b.dtype() == DType::Text {
        return None;
    }
    match (a.as_numeric(), b.as_numeric()) {
        (Some(x), Some(y)) => {
            let xs: Vec<f64> = rows.iter().map(|&r| x[r].expect("filtered")).collect();
            let ys: Vec<f64> = rows.iter().map(|&r| y[r].expect("filtered")).collect();
            pearson_p_value(&xs, &ys)
        }
        _ => chi_square_p_value(&categories(a, &rows), &categories(b, &rows)),
    }
}

/// Fraction of `ground_truth` columns declared dependent on `update_column`
/// at level `alpha`.
pub fn whatif_utility(table: &Table, update_column: &str, ground_truth: &[String], alpha: f64) -> Result<f64> {
    Ok(WhatIfTask::new(update_column, ground_truth.to_vec(), alpha).evaluate(table)?.utility)
}

#[derive(Clone, Debug)]
pub struct WhatIfTask {
    pub update_column: String,
    pub ground_truth: BTreeSet<String>,
    pub alpha: f64,
}

impl WhatIfTask {
    pub fn new(update_column: impl Into<String>, ground_truth: Vec<String>, alpha: f64) -> Self {
        WhatIfTask {
            update_column: update_column.into(),
            ground_truth: ground_truth.into_iter().collect(),
            alpha,
        }
    }
}

impl UtilityTask for WhatIfTask {
    fn name(&self) -> &str {
        "whatif"
    }

    fn target_column(&self) -> Option<&str> {
        Some(&self.update_column)
    }

    fn evaluate(&self, table: &Table) -> Result<TaskResult> {
        if self.ground_truth.is_empty() {
            return Err(Error::InvalidConfig("whatif ground truth is empty".into()));
        }
        let ui = table
            .column_index(&self.update_column)
            .ok_or_else(|| Error::UnknownColumn(self.update_column.clone()))?;
        let update = &table.columns()[ui];
        let mut declared = BTreeSet::new();
        for (i, col) in table.columns().iter().enumerate() {
            if i == ui {
                continue;
            }
            if dependence_p_value(update, col).is_some_and(|p| p <= self.alpha) {
                declared.insert(table.column_name(i));
            }
        }
        let hit = declared.intersection(&self.ground_truth).count();
        Ok(TaskResult::new(hit as f64 / self.ground_truth.len() as f64)
            .with("metric", "ground_truth_fraction")
            .with("declared", declared.len()))
    }
}
