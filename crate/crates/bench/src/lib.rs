//! Fixtures shared by the benchmarks.

use metam::bench::{PreparedInstance, SynthSpec};
use metam::PipelineConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded random profile vectors in [0,1]^dim.
pub fn random_profiles(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Default semi-synthetic instance with `n` candidates, prepared for search.
pub fn instance(n: usize, seed: u64) -> PreparedInstance {
    let spec = SynthSpec {
        n_candidates: n,
        seed,
        ..SynthSpec::default()
    };
    PreparedInstance::new(&spec, &PipelineConfig::default()).expect("synthetic instance")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(random_profiles(5, 3, 1), random_profiles(5, 3, 1));
        let p = instance(12, 0);
        assert_eq!(p.prepared.ids.len(), 12);
    }
}
