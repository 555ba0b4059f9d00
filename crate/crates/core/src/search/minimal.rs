use super::{Halt, Mechanism, QueryEngine, SubsetOracle};
use crate::error::{Error, Result};

pub const BRUTE_FORCE_LIMIT: usize = 16;

/// Drops elements, last-inserted first, while the utility stays at or above
/// the bar (θ when `set` reaches it, else the set's own utility). Passes
/// repeat until nothing can be dropped, so the result is minimal even for
/// non-monotone utilities.
pub fn identify_minimal(eng: &mut QueryEngine<'_>, set: &[usize], theta: f64) -> Result<(Vec<usize>, f64), Halt> {
    let mut cur = set.to_vec();
    let mut u = eng.evaluate(&cur, Mechanism::Minimality)?;
    let bar = if u >= theta { theta } else { u };
    loop {
        let mut dropped = false;
        for pos in (0..cur.len()).rev() {
            let mut trial = cur.clone();
            trial.remove(pos);
            let ut = eng.evaluate(&trial, Mechanism::Minimality)?;
            if ut >= bar {
                cur = trial;
                u = ut;
                dropped = true;
            }
        }
        if !dropped {
            return Ok((cur, u));
        }
    }
}

/// Advances `idx` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
        return false;
    };
    idx[i] += 1;
    for j in i + 1..k {
        idx[j] = idx[j - 1] + 1;
    }
    true
}

/// Calls `f` on every subset of `0..n` of size `k`, lexicographically, until
/// it returns `Some`.
pub(crate) fn for_each_subset<T>(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> Result<Option<T>>) -> Result<Option<T>> {
    if k > n {
        return Ok(None);
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if let Some(t) = f(&idx)? {
            return Ok(Some(t));
        }
        if !next_combination(&mut idx, n) {
            return Ok(None);
        }
    }
}

fn guard(n: usize) -> Result<()> {
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(n, BRUTE_FORCE_LIMIT));
    }
    Ok(())
}

/// Smallest subset of the `n` candidates reaching θ, ties to the
/// lexicographically first index tuple (candidates are sorted by id).
pub fn brute_force_optimal(oracle: &dyn SubsetOracle, n: usize, theta: f64, k_max: usize) -> Result<Option<(Vec<usize>, f64)>> {
    guard(n)?;
    for k in 0..=k_max.min(n) {
        let hit = for_each_subset(n, k, |s| {
            let u = oracle.evaluate(s)?;
            Ok((u >= theta).then(|| (s.to_vec(), u)))
        })?;
        if hit.is_some() {
            return Ok(hit);
        }
    }
    Ok(None)
}

/// Highest utility over subsets of size exactly `k`.
pub fn brute_force_best(oracle: &dyn SubsetOracle, n: usize, k: usize) -> Result<(Vec<usize>, f64)> {
    guard(n)?;
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for_each_subset(n, k.min(n), |s| {
        let u = oracle.evaluate(s)?;
        if u > best.1 {
            best = (s.to_vec(), u);
        }
        Ok(None::<()>)
    })?;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{FnOracle, SearchConfig};

    fn engine(oracle: &dyn SubsetOracle) -> QueryEngine<'_> {
        let mut eng = QueryEngine::new(oracle, &SearchConfig::with_theta(0.8));
        eng.base().unwrap();
        eng
    }

    #[test]
    fn only_the_needed_element_survives() {
        // u depends on element 0 only.
        let oracle = FnOracle(|s: &[usize]| Ok(if s.contains(&0) { 0.9 } else { 0.1 }));
        let mut eng = engine(&oracle);
        let (set, u) = identify_minimal(&mut eng, &[0, 1, 2], 0.8).unwrap();
        assert_eq!(set, vec![0]);
        assert_eq!(u, 0.9);
    }

    #[test]
    fn necessary_elements_are_kept() {
        let oracle = FnOracle(|s: &[usize]| Ok(if s.len() == 3 { 0.9 } else { 0.1 }));
        let mut eng = engine(&oracle);
        assert_eq!(identify_minimal(&mut eng, &[2, 0, 1], 0.8).unwrap().0, vec![2, 0, 1]);
    }

    #[test]
    fn first_inserted_survives() {
        // u({A}) = u({B}) = u({A,B}) = θ; both insertion orders.
        let oracle = FnOracle(|s: &[usize]| Ok(if s.is_empty() { 0.1 } else { 0.8 }));
        for order in [[0, 1], [1, 0]] {
            let mut eng = engine(&oracle);
            assert_eq!(identify_minimal(&mut eng, &order, 0.8).unwrap().0, vec![order[0]]);
        }
    }

    #[test]
    fn best_effort_is_relative_to_own_utility() {
        let oracle = FnOracle(|s: &[usize]| Ok(0.1 + 0.2 * f64::from(u8::from(s.contains(&1)))));
        let mut eng = engine(&oracle);
        assert_eq!(identify_minimal(&mut eng, &[0, 1, 2], 0.8).unwrap().0, vec![1]);
    }

    #[test]
    fn brute_force_examples() {
        let pair = FnOracle(|s: &[usize]| Ok(if s.contains(&3) && s.contains(&7) { 0.9 } else { 0.2 }));
        assert_eq!(brute_force_optimal(&pair, 10, 0.85, 3).unwrap().unwrap().0, vec![3, 7]);
        assert!(brute_force_optimal(&pair, 10, 0.95, 3).unwrap().is_none());
        assert_eq!(brute_force_optimal(&pair, 10, 0.1, 3).unwrap().unwrap().0, Vec::<usize>::new());
        assert!(matches!(brute_force_optimal(&pair, 17, 0.5, 2), Err(Error::TooLarge(17, 16))));
    }

    #[test]
    fn combinations_are_complete_and_ordered() {
        let mut seen = Vec::new();
        for_each_subset(5, 3, |s| {
            seen.push(s.to_vec());
            Ok(None::<()>)
        })
        .unwrap();
        assert_eq!(seen.len(), 10);
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
    }
}
