//! Small bagged ensembles of depth-limited CART trees.
//!
//! Features are dense column-major `f64` matrices. Every feature is
//! considered at every split, so a feature with a single value never changes
//! the fitted ensemble or its random stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 16,
            max_depth: 6,
            min_leaf: 1,
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, features: &[Vec<f64>], row: usize) -> &[f64] {
        match self {
            Node::Leaf(v) => v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if features[*feature][row] <= *threshold {
                    left.predict(features, row)
                } else {
                    right.predict(features, row)
                }
            }
        }
    }
}

/// Target of a tree: class labels (Gini) or real values (variance).
#[derive(Clone, Copy)]
enum Target<'a> {
    Classes(&'a [usize], usize),
    Values(&'a [f64]),
}

impl Target<'_> {
    fn leaf(&self, rows: &[usize]) -> Vec<f64> {
        match *self {
            Target::Classes(y, k) => {
                let mut counts = vec![0.0; k];
                for &r in rows {
                    counts[y[r]] += 1.0;
                }
                let n = rows.len().max(1) as f64;
                counts.iter().map(|c| c / n).collect()
            }
            Target::Values(y) => {
                let n = rows.len().max(1) as f64;
                vec![rows.iter().map(|&r| y[r]).sum::<f64>() / n]
            }
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match *self {
            Target::Classes(y, _) => rows.iter().all(|&r| y[r] == y[rows[0]]),
            Target::Values(y) => rows.iter().all(|&r| y[r] == y[rows[0]]),
        }
    }
}

/// Incremental impurity accumulator over a left/right partition.
enum Acc {
    Gini { left: Vec<f64>, right: Vec<f64> },
    Var { ls: f64, lss: f64, rs: f64, rss: f64 },
}

impl Acc {
    fn new(target: Target<'_>, rows: &[usize]) -> Acc {
        match target {
            Target::Classes(y, k) => {
                let mut right = vec![0.0; k];
                for &r in rows {
                    right[y[r]] += 1.0;
                }
                Acc::Gini {
                    left: vec![0.0; k],
                    right,
                }
            }
            Target::Values(y) => {
                let (rs, rss) = rows.iter().fold((0.0, 0.0), |(s, ss), &r| (s + y[r], ss + y[r] * y[r]));
                Acc::Var {
                    ls: 0.0,
                    lss: 0.0,
                    rs,
                    rss,
                }
            }
        }
    }

    fn shift(&mut self, target: Target<'_>, row: usize) {
        match (self, target) {
            (Acc::Gini { left, right }, Target::Classes(y, _)) => {
                left[y[row]] += 1.0;
                right[y[row]] -= 1.0;
            }
            (Acc::Var { ls, lss, rs, rss }, Target::Values(y)) => {
                let v = y[row];
                *ls += v;
                *lss += v * v;
                *rs -= v;
                *rss -= v * v;
            }
            _ => unreachable!("accumulator matches target kind"),
        }
    }

    /// Weighted impurity (sum over both sides, scaled by side sizes).
    fn cost(&self, nl: f64, nr: f64) -> f64 {
        match self {
            Acc::Gini { left, right } => {
                let g = |c: &[f64], n: f64| n - c.iter().map(|x| x * x).sum::<f64>() / n;
                g(left, nl) + g(right, nr)
            }
            Acc::Var { ls, lss, rs, rss } => (lss - ls * ls / nl) + (rss - rs * rs / nr),
        }
    }
}

fn impurity(target: Target<'_>, rows: &[usize]) -> f64 {
    let acc = Acc::new(target, rows);
    match acc {
        Acc::Gini { right, .. } => {
            let n = rows.len() as f64;
            n - right.iter().map(|x| x * x).sum::<f64>() / n
        }
        Acc::Var { rs, rss, .. } => rss - rs * rs / rows.len() as f64,
    }
}

fn best_split(features: &[Vec<f64>], target: Target<'_>, rows: &[usize], min_leaf: usize) -> Option<(usize, f64, f64)> {
    let parent = impurity(target, rows);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut sorted = rows.to_vec();
    for (f, col) in features.iter().enumerate() {
        sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        if col[sorted[0]] == col[sorted[sorted.len() - 1]] {
            continue;
        }
        let mut acc = Acc::new(target, &sorted);
        let n = sorted.len();
        for i in 0..n - 1 {
            acc.shift(target, sorted[i]);
            let (a, b) = (col[sorted[i]], col[sorted[i + 1]]);
            if a == b || i + 1 < min_leaf || n - i - 1 < min_leaf {
                continue;
            }
            let cost = acc.cost((i + 1) as f64, (n - i - 1) as f64);
            if parent - cost > 1e-12 && best.is_none_or(|(_, _, c)| cost < c) {
                best = Some((f, a + (b - a) / 2.0, cost));
            }
        }
    }
    best
}

fn grow(features: &[Vec<f64>], target: Target<'_>, rows: &[usize], depth: usize, params: &ForestParams) -> Node {
    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf.max(1) || target.is_pure(rows) {
        return Node::Leaf(target.leaf(rows));
    }
    match best_split(features, target, rows, params.min_leaf.max(1)) {
        None => Node::Leaf(target.leaf(rows)),
        Some((feature, threshold, _)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| features[feature][row] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(features, target, &l, depth + 1, params)),
                right: Box::new(grow(features, target, &r, depth + 1, params)),
            }
        }
    }
}

fn bootstrap(rng: &mut ChaCha8Rng, train: &[usize]) -> Vec<usize> {
    (0..train.len()).map(|_| train[rng.random_range(0..train.len())]).collect()
}

pub struct Forest {
    trees: Vec<Node>,
}

impl Forest {
    /// Bagged Gini trees over `train` rows; `y[r]` is a class in `0..classes`.
    pub fn classifier(features: &[Vec<f64>], y: &[usize], classes: usize, train: &[usize], params: &ForestParams, seed: u64) -> Forest {
        Forest::fit(features, Target::Classes(y, classes), train, params, seed)
    }

    /// Bagged variance-reduction regression trees.
    pub fn regressor(features: &[Vec<f64>], y: &[f64], train: &[usize], params: &ForestParams, seed: u64) -> Forest {
        Forest::fit(features, Target::Values(y), train, params, seed)
    }

    fn fit(features: &[Vec<f64>], target: Target<'_>, train: &[usize], params: &ForestParams, seed: u64) -> Forest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.trees.max(1))
            .map(|_| {
                let rows = bootstrap(&mut rng, train);
                grow(features, target, &rows, 0, params)
            })
            .collect();
        Forest { trees }
    }

    /// Averaged leaf outputs: class probabilities, or a one-element mean.
    pub fn predict(&self, features: &[Vec<f64>], row: usize) -> Vec<f64> {
        let mut acc: Vec<f64> = Vec::new();
        for t in &self.trees {
            let out = t.predict(features, row);
            if acc.is_empty() {
                acc = vec![0.0; out.len()];
            }
            for (a, o) in acc.iter_mut().zip(out) {
                *a += o;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter().map(|a| a / n).collect()
    }

    pub fn predict_class(&self, features: &[Vec<f64>], row: usize) -> usize {
        let p = self.predict(features, row);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }

    pub fn predict_value(&self, features: &[Vec<f64>], row: usize) -> f64 {
        self.predict(features, row)[0]
    }
}
