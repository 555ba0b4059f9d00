use metam::clustering::{chebyshev_distance, cluster_partition};
use metam::discovery::{build_join_index, generate_candidates, materialize, DEFAULT_SIGNATURE_SIZE};
use metam::profiles::{correlation_profile, mutual_info_profile};
use metam::repository::{Column, Repository, Table};
use metam::scoring::{estimate_importance, profile_based_score};
use metam::search::{identify_minimal, FnOracle, QueryEngine, SearchConfig};
use proptest::prelude::*;

fn points(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..=1.0, dim), 1..120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_a_separated_cover(pts in points(3), eps in 0.01f64..0.5) {
        let set = cluster_partition(&pts, eps, 0).unwrap();
        for (i, p) in pts.iter().enumerate() {
            prop_assert!(chebyshev_distance(p, &pts[set.centers[set.assignment[i]]]).unwrap() <= eps);
        }
        for (a, &ca) in set.centers.iter().enumerate() {
            for &cb in &set.centers[a + 1..] {
                prop_assert!(chebyshev_distance(&pts[ca], &pts[cb]).unwrap() > eps);
            }
        }
    }

    #[test]
    fn column_profiles_stay_in_unit_range(
        x in prop::collection::vec(prop::option::weighted(0.9, -1e3f64..1e3), 2..200),
        y in prop::collection::vec(prop::option::weighted(0.9, -1e3f64..1e3), 2..200),
    ) {
        let (a, b) = (Column::numeric(None, x), Column::numeric(None, y));
        for v in [correlation_profile(&a, &b), mutual_info_profile(&a, &b, 10)] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn scores_and_weights_are_finite(
        obs in prop::collection::vec((prop::collection::vec(0.0f64..=1.0, 4), -1.0f64..1.0), 0..40),
        p in prop::collection::vec(0.0f64..=1.0, 4),
    ) {
        let beta = estimate_importance(&obs, 4, 1e-3);
        prop_assert_eq!(beta.len(), 4);
        prop_assert!(beta.iter().all(|b| b.is_finite()));
        let s = profile_based_score(&p, &beta);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn materialize_preserves_base_rows(n in 5usize..60, dup in 0usize..3, seed in 0u64..1000) {
        let keys: Vec<Option<String>> = (0..n).map(|i| Some(format!("k{i:03}"))).collect();
        let base = Table::new("in.csv", vec![Column::from_raw(Some("key".into()), &keys)]).unwrap();
        // Side table with some keys repeated `dup` extra times.
        let mut side_keys = keys.clone();
        side_keys.extend(keys.iter().take(dup).cloned());
        let vals: Vec<Option<f64>> = (0..side_keys.len()).map(|i| Some(((i as u64 * 31 + seed) % 17) as f64)).collect();
        let side = Table::new("side.csv", vec![Column::from_raw(Some("key".into()), &side_keys), Column::numeric(Some("v".into()), vals)]).unwrap();
        let repo = Repository::from_tables("mem", vec![side]);
        let index = build_join_index(&repo, DEFAULT_SIGNATURE_SIZE);
        let augs = generate_candidates(&base, &index, 0.6, 2);
        prop_assert!(!augs.is_empty());
        let t = materialize(&base, &repo, &augs).unwrap();
        prop_assert_eq!(t.row_count(), n);
        prop_assert_eq!(t.width(), 1 + augs.len());
    }

    #[test]
    fn minimality_pass_leaves_no_removable_element(
        // Dyadic weights keep every sum exact.
        weights in prop::collection::vec((0u32..20).prop_map(|w| f64::from(w) / 64.0), 6),
        order in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
        theta in 0.2f64..0.9,
    ) {
        let oracle = FnOracle(|s: &[usize]| Ok(s.iter().map(|&i| weights[i]).sum::<f64>().min(1.0)));
        let mut eng = QueryEngine::new(&oracle, &SearchConfig::with_theta(theta));
        eng.base().unwrap();
        let full: f64 = weights.iter().sum::<f64>().min(1.0);
        let (set, u) = identify_minimal(&mut eng, &order, theta).unwrap();
        let bar = if full >= theta { theta } else { full };
        prop_assert!(u >= bar);
        for pos in 0..set.len() {
            let mut rest = set.clone();
            rest.remove(pos);
            let ur: f64 = rest.iter().map(|&i| weights[i]).sum::<f64>().min(1.0);
            prop_assert!(ur < bar);
        }
    }
}
