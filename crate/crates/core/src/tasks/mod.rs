//! Utility tasks: black boxes mapping a (possibly augmented) table to a
//! utility in [0,1].

mod external;
pub mod forest;
mod whatif;

pub use external::{external_utility, ExternalTask, DEFAULT_TIMEOUT_SECS};
pub use whatif::{whatif_utility, WhatIfTask, DEFAULT_ALPHA};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repository::{Column, ColumnValues, DType, Table};
use forest::{Forest, ForestParams};

pub const MIN_ROWS: usize = 20;
pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub utility: f64,
    pub details: BTreeMap<String, String>,
}

impl TaskResult {
    pub fn new(utility: f64) -> Self {
        TaskResult {
            utility,
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.details.insert(key.to_string(), value.to_string());
        self
    }
}

/// Rejects non-finite or out-of-range utilities at the task boundary.
pub fn check_utility(u: f64) -> Result<f64> {
    if u.is_finite() && (0.0..=1.0).contains(&u) {
        Ok(u)
    } else {
        Err(Error::TaskFailure(format!("utility {u} outside [0, 1]")))
    }
}

pub trait UtilityTask: Send + Sync {
    fn name(&self) -> &str;

    /// Column the task predicts or intervenes on, used to pair profiles.
    fn target_column(&self) -> Option<&str>;

    fn evaluate(&self, table: &Table) -> Result<TaskResult>;

    fn utility(&self, table: &Table) -> Result<f64> {
        check_utility(self.evaluate(table)?.utility)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
    Whatif,
    External,
}

/// JSON task description: `{kind, target, seed, command?, alpha?, ground_truth?, update_column?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

impl TaskConfig {
    pub fn classification(target: impl Into<String>, seed: u64) -> Self {
        TaskConfig {
            kind: TaskKind::Classification,
            target: Some(target.into()),
            seed,
            command: None,
            alpha: None,
            ground_truth: None,
            update_column: None,
            timeout_secs: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn build(&self) -> Result<Box<dyn UtilityTask>> {
        let need_target = || {
            self.target
                .clone()
                .ok_or_else(|| Error::InvalidConfig(format!("{:?} task requires a target", self.kind)))
        };
        Ok(match self.kind {
            TaskKind::Classification => Box::new(ClassificationTask::new(need_target()?, self.seed)),
            TaskKind::Regression => Box::new(RegressionTask::new(need_target()?, self.seed)),
            TaskKind::Whatif => {
                let update = self
                    .update_column
                    .clone()
                    .or_else(|| self.target.clone())
                    .ok_or_else(|| Error::InvalidConfig("whatif task requires update_column".into()))?;
                let truth = self.ground_truth.clone().unwrap_or_default();
                if truth.is_empty() {
                    return Err(Error::InvalidConfig("whatif task requires a nonempty ground_truth".into()));
                }
                Box::new(WhatIfTask::new(update, truth, self.alpha.unwrap_or(DEFAULT_ALPHA)))
            }
            TaskKind::External => {
                let cmd = self
                    .command
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("external task requires a command".into()))?;
                let mut t = ExternalTask::new(cmd);
                t.target = self.target.clone();
                if let Some(s) = self.timeout_secs {
                    t.timeout = std::time::Duration::from_secs(s);
                }
                Box::new(t)
            }
        })
    }
}

/// Seeded 70/30 split of `rows`.
pub fn train_validation_split(rows: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((rows.len() as f64) * TRAIN_FRACTION).round() as usize;
    let val = shuffled.split_off(cut.min(shuffled.len()));
    (shuffled, val)
}

/// Dense column-major features from every non-target, non-text column.
/// Nulls are imputed from the training rows (mean or mode); categorical
/// labels are encoded in sorted order.
pub fn feature_matrix(table: &Table, exclude: usize, train: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (ci, col) in table.columns().iter().enumerate() {
        if ci == exclude || col.dtype() == DType::Text {
            continue;
        }
        let full: Vec<Option<f64>> = match col.values() {
            ColumnValues::Numeric(v) => v.clone(),
            ColumnValues::Strings(v) => {
                let labels: BTreeSet<&str> = v.iter().flatten().map(String::as_str).collect();
                let code: HashMap<&str, f64> = labels.into_iter().enumerate().map(|(i, s)| (s, i as f64)).collect();
                v.iter().map(|s| s.as_deref().map(|s| code[s])).collect()
            }
        };
        let fill = match col.dtype() {
            DType::Numeric => {
                let vals: Vec<f64> = train.iter().filter_map(|&r| full[r]).collect();
                if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            }
            _ => {
                let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
                for v in train.iter().filter_map(|&r| full[r]) {
                    *counts.entry(v.to_bits()).or_default() += 1;
                }
                let mut best: Option<(f64, usize)> = None;
                for (bits, c) in counts {
                    let v = f64::from_bits(bits);
                    if best.is_none_or(|(bv, bc)| c > bc || (c == bc && v < bv)) {
                        best = Some((v, c));
                    }
                }
                best.map_or(0.0, |(v, _)| v)
            }
        };
        out.push(full.iter().map(|v| v.unwrap_or(fill)).collect());
    }
    out
}

fn target_index(table: &Table, target: &str) -> Result<usize> {
    table
        .column_index(target)
        .ok_or_else(|| Error::UnknownColumn(target.to_string()))
}

fn ensure_rows(n: usize) -> Result<()> {
    if n < MIN_ROWS {
        return Err(Error::TaskFailure(format!("{n} usable rows, at least {MIN_ROWS} required")));
    }
    Ok(())
}

/// Macro-averaged F1 over the classes present in truth or predictions.
pub fn macro_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let classes: BTreeSet<usize> = truth.iter().chain(pred).copied().collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &c in &classes {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        total += if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
    }
    total / classes.len() as f64
}

/// Macro F-score of a bagged tree ensemble on a seeded validation split.
pub fn classification_utility(table: &Table, target: &str, seed: u64) -> Result<f64> {
    Ok(ClassificationTask::new(target, seed).evaluate(table)?.utility)
}

pub fn regression_utility(table: &Table, target: &str, seed: u64) -> Result<f64> {
    Ok(RegressionTask::new(target, seed).evaluate(table)?.utility)
}

#[derive(Clone, Debug)]
pub struct ClassificationTask {
    pub target: String,
    pub seed: u64,
    pub params: ForestParams,
}

impl ClassificationTask {
    pub fn new(target: impl Into<String>, seed: u64) -> Self {
        ClassificationTask {
            target: target.into(),
            seed,
            params: ForestParams::default(),
        }
    }
}

impl UtilityTask for ClassificationTask {
    fn name(&self) -> &str {
        "classification"
    }

    fn target_column(&self) -> Option<&str> {
        Some(&self.target)
    }

    fn evaluate(&self, table: &Table) -> Result<TaskResult> {
        let ti = target_index(table, &self.target)?;
        let tcol: &Column = &table.columns()[ti];
        let labels: Vec<Option<String>> = (0..table.row_count()).map(|r| tcol.cell_text(r)).collect();
        let rows: Vec<usize> = (0..table.row_count()).filter(|&r| labels[r].is_some()).collect();
        ensure_rows(rows.len())?;
        let classes: BTreeSet<&str> = rows.iter().filter_map(|&r| labels[r].as_deref()).collect();
        if classes.len() < 2 {
            return Ok(TaskResult::new(0.0).with("degenerate", "single class"));
        }
        let code: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let y: Vec<usize> = labels.iter().map(|l| l.as_deref().map_or(0, |s| code[s])).collect();
        let (train, val) = train_validation_split(&rows, self.seed);
        let x = feature_matrix(table, ti, &train);
        let truth: Vec<usize> = val.iter().map(|&r| y[r]).collect();
        let pred: Vec<usize> = if x.is_empty() {
            let mut counts = vec![0usize; classes.len()];
            for &r in &train {
                counts[y[r]] += 1;
            }
            let majority = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
            vec![majority; val.len()]
        } else {
            let forest = Forest::classifier(&x, &y, classes.len(), &train, &self.params, self.seed);
            val.iter().map(|&r| forest.predict_class(&x, r)).collect()
        };
        Ok(TaskResult::new(macro_f1(&truth, &pred).clamp(0.0, 1.0))
            .with("metric", "macro_f1")
            .with("train_rows", train.len())
            .with("validation_rows", val.len()))
    }
}

#[derive(Clone, Debug)]
pub struct RegressionTask {
    pub target: String,
    pub seed: u64,
    pub params: ForestParams,
}

impl RegressionTask {
    pub fn new(target: impl Into<String>, seed: u64) -> Self {
        RegressionTask {
            target: target.into(),
            seed,
            params: ForestParams::default(),
        }
    }
}

impl UtilityTask for RegressionTask {
    fn name(&self) -> &str {
        "regression"
    }

    fn target_column(&self) -> Option<&str> {
        Some(&self.target)
    }

    fn evaluate(&self, table: &Table) -> Result<TaskResult> {
        let ti = target_index(table, &self.target)?;
        let raw = table.columns()[ti]
            .as_numeric()
            .ok_or_else(|| Error::TaskFailure(format!("regression target {} is not numeric", self.target)))?;
        let rows: Vec<usize> = (0..raw.len()).filter(|&r| raw[r].is_some()).collect();
        ensure_rows(rows.len())?;
        let (train, val) = train_validation_split(&rows, self.seed);
        let lo = train.iter().filter_map(|&r| raw[r]).fold(f64::INFINITY, f64::min);
        let hi = train.iter().filter_map(|&r| raw[r]).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Ok(TaskResult::new(1.0).with("degenerate", "constant target"));
        }
        let y: Vec<f64> = raw.iter().map(|v| v.map_or(0.0, |v| (v - lo) / (hi - lo))).collect();
        let x = feature_matrix(table, ti, &train);
        let pred: Vec<f64> = if x.is_empty() {
            let mean = train.iter().map(|&r| y[r]).sum::<f64>() / train.len() as f64;
            vec![mean; val.len()]
        } else {
            let forest = Forest::regressor(&x, &y, &train, &self.params, self.seed);
            val.iter().map(|&r| forest.predict_value(&x, r)).collect()
        };
        let mae = val.iter().zip(&pred).map(|(&r, p)| (y[r] - p).abs()).sum::<f64>() / val.len().max(1) as f64;
        Ok(TaskResult::new((1.0 - mae).clamp(0.0, 1.0))
            .with("metric", "1-mae")
            .with("train_rows", train.len())
            .with("validation_rows", val.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn labels(v: &[bool]) -> Column {
        Column::strings(
            Some("y".into()),
            DType::Categorical,
            v.iter().map(|b| Some(if *b { "pos" } else { "neg" }.to_string())).collect(),
        )
    }

    fn noise_table(n: usize, seed: u64) -> Table {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let mut y = y;
        y.shuffle(&mut rng);
        Table::new(
            "t",
            vec![
                labels(&y),
                Column::numeric(Some("a".into()), (0..n).map(|_| Some(rng.random::<f64>())).collect()),
                Column::numeric(Some("b".into()), (0..n).map(|_| Some(rng.random::<f64>())).collect()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn copied_target_is_learned() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<bool> = (0..200).map(|_| rng.random::<bool>()).collect();
            let copy = Column::numeric(Some("copy".into()), y.iter().map(|b| Some(f64::from(u8::from(*b)))).collect());
            let t = Table::new("t", vec![labels(&y), copy]).unwrap();
            assert!(classification_utility(&t, "y", seed).unwrap() >= 0.95);
        }
    }

    #[test]
    fn independent_features_are_chance_level() {
        for seed in 0..20 {
            let u = classification_utility(&noise_table(1000, seed), "y", seed).unwrap();
            assert!((0.3..=0.7).contains(&u), "seed {seed}: {u}");
        }
    }

    #[test]
    fn classification_is_deterministic() {
        let t = noise_table(300, 4);
        assert_eq!(classification_utility(&t, "y", 7).unwrap(), classification_utility(&t, "y", 7).unwrap());
    }

    #[test]
    fn constant_column_barely_matters() {
        let mut diff = 0.0;
        for seed in 0..20 {
            let t = noise_table(300, seed);
            let mut with = t.clone();
            with.push_column(Column::numeric(Some("c".into()), vec![Some(1.0); 300])).unwrap();
            diff += (classification_utility(&t, "y", seed).unwrap() - classification_utility(&with, "y", seed).unwrap()).abs();
        }
        assert!(diff / 20.0 <= 0.02);
    }

    #[test]
    fn degenerate_targets() {
        let t = Table::new("t", vec![labels(&[true; 30])]).unwrap();
        assert_eq!(classification_utility(&t, "y", 0).unwrap(), 0.0);
        let small = Table::new("t", vec![labels(&[true, false, true])]).unwrap();
        assert!(matches!(classification_utility(&small, "y", 0), Err(Error::TaskFailure(_))));
        assert!(matches!(classification_utility(&small, "nope", 0), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn regression_copy_and_noise() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<Option<f64>> = (0..300).map(|_| Some(rng.random::<f64>() * 10.0)).collect();
            let t = Table::new(
                "t",
                vec![Column::numeric(Some("y".into()), y.clone()), Column::numeric(Some("x".into()), y)],
            )
            .unwrap();
            assert!(regression_utility(&t, "y", seed).unwrap() >= 0.95);
        }
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let y: Vec<Option<f64>> = (0..400).map(|_| Some(rng.random::<f64>())).collect();
            let x: Vec<Option<f64>> = (0..400).map(|_| Some(rng.random::<f64>())).collect();
            let t = Table::new("t", vec![Column::numeric(Some("y".into()), y), Column::numeric(Some("x".into()), x)]).unwrap();
            let u = regression_utility(&t, "y", seed).unwrap();
            assert!((0.6..=0.8).contains(&u), "{u}");
        }
    }

    #[test]
    fn regression_constant_target() {
        let t = Table::new("t", vec![Column::numeric(Some("y".into()), vec![Some(2.0); 25])]).unwrap();
        let r = RegressionTask::new("y", 0).evaluate(&t).unwrap();
        assert_eq!(r.utility, 1.0);
        assert!(r.details.contains_key("degenerate"));
    }

    #[test]
    fn macro_f1_arithmetic() {
        assert_eq!(macro_f1(&[0, 1, 0, 1], &[0, 1, 0, 1]), 1.0);
        // class 0: tp 1 fp 0 fn 1 → 2/3; class 1: tp 2 fp 1 fn 0 → 4/5
        assert!((macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1]) - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn task_config_round_trip() {
        let json = r#"{"kind":"classification","target":"y","seed":3}"#;
        let c: TaskConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c, TaskConfig::classification("y", 3));
        assert_eq!(c.build().unwrap().target_column(), Some("y"));
        let bad: TaskConfig = serde_json::from_str(r#"{"kind":"whatif","update_column":"u"}"#).unwrap();
        assert!(bad.build().is_err());
    }

    #[test]
    fn boundary_rejects_bad_utilities() {
        assert!(check_utility(1.2).is_err());
        assert!(check_utility(f64::NAN).is_err());
        assert_eq!(check_utility(0.3).unwrap(), 0.3);
    }
}
