//! Quality scores: a profile-based score from learned profile importances
//! plus a utility-based score propagated from queried cluster neighbours.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clustering::{chebyshev, ClusterSet, Homogeneity};

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Ridge least-squares fit of gains on profile vectors:
/// (Σ p pᵀ + ridge·I) β = Σ p q. No observations gives uniform weights.
pub fn estimate_importance(observations: &[(Vec<f64>, f64)], dim: usize, ridge: f64) -> Vec<f64> {
    if observations.is_empty() || dim == 0 {
        return vec![1.0 / dim.max(1) as f64; dim];
    }
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (p, q) in observations {
        let v = DVector::from_column_slice(p);
        gram += &v * v.transpose();
        rhs += v * *q;
    }
    solve(gram, rhs, ridge)
}

fn solve(mut gram: DMatrix<f64>, rhs: DVector<f64>, ridge: f64) -> Vec<f64> {
    let dim = rhs.len();
    for i in 0..dim {
        gram[(i, i)] += ridge;
    }
    let beta = gram
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|b| b.iter().all(|x| x.is_finite()))
        .or_else(|| gram.svd(true, true).solve(&rhs, 1e-12).ok());
    match beta {
        Some(b) => b.iter().copied().collect(),
        None => vec![1.0 / dim as f64; dim],
    }
}

/// ⟨β, p⟩ / Σ|β|, clamped to [0,1].
pub fn profile_based_score(p: &[f64], beta: &[f64]) -> f64 {
    let norm: f64 = beta.iter().map(|b| b.abs()).sum::<f64>().max(1e-12);
    let dot: f64 = p.iter().zip(beta).map(|(a, b)| a * b).sum();
    let s = dot / norm;
    if s.is_finite() {
        s.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImportanceWeights {
    pub beta: Vec<f64>,
    pub observations: Vec<(Vec<f64>, f64)>,
    pub ridge: f64,
}

impl ImportanceWeights {
    pub fn new(dim: usize, ridge: f64) -> Self {
        ImportanceWeights {
            beta: estimate_importance(&[], dim, ridge),
            observations: Vec::new(),
            ridge,
        }
    }

    pub fn observe(&mut self, profile: Vec<f64>, gain: f64) {
        self.observations.push((profile, gain));
        self.beta = estimate_importance(&self.observations, self.beta.len(), self.ridge);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QualityState {
    pub profile_score: Vec<f64>,
    pub utility_score: Vec<f64>,
    /// Observed utility of each queried candidate (latest query).
    pub queried: Vec<Option<f64>>,
    pub weights: ImportanceWeights,
}

impl QualityState {
    pub fn new(profiles: &[Vec<f64>], ridge: f64) -> Self {
        let dim = profiles.first().map_or(0, Vec::len);
        let weights = ImportanceWeights::new(dim, ridge);
        QualityState {
            profile_score: profiles.iter().map(|p| profile_based_score(p, &weights.beta)).collect(),
            utility_score: vec![0.0; profiles.len()],
            queried: vec![None; profiles.len()],
            weights,
        }
    }

    pub fn quality(&self, i: usize) -> f64 {
        self.profile_score[i] + self.utility_score[i]
    }

    /// Records a query of candidate `aug`: its gain over `current_utility`
    /// becomes its utility score and is propagated, discounted by profile
    /// distance, to unqueried members of its cluster (unless the cluster
    /// failed the homogeneity test). β is refit and every profile score
    /// refreshed.
    pub fn update(
        &mut self,
        aug: usize,
        observed_utility: f64,
        current_utility: f64,
        profiles: &[Vec<f64>],
        clusters: &ClusterSet,
    ) {
        let gain = (observed_utility - current_utility).clamp(0.0, 1.0);
        self.queried[aug] = Some(observed_utility);
        self.utility_score[aug] = gain;
        let cluster = clusters.assignment[aug];
        if clusters.homogeneous[cluster] != Homogeneity::No {
            for m in clusters.members(cluster) {
                if m != aug && self.queried[m].is_none() {
                    let d = chebyshev(&profiles[m], &profiles[aug]);
                    let s = ((1.0 - d) * gain).max(0.0);
                    if s > self.utility_score[m] {
                        self.utility_score[m] = s;
                    }
                }
            }
        }
        self.weights.observe(profiles[aug].clone(), gain);
        let beta = &self.weights.beta;
        for (s, p) in self.profile_score.iter_mut().zip(profiles) {
            *s = profile_based_score(p, beta);
        }
    }

    /// Drops propagated scores of unqueried members of a dissolved cluster.
    pub fn clear_propagated(&mut self, members: &[usize]) {
        for &m in members {
            if self.queried[m].is_none() {
                self.utility_score[m] = 0.0;
            }
        }
    }
}
