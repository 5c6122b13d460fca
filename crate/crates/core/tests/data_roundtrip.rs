//! File round-trips and fold construction.

use proptest::prelude::*;

use proxbridge::data::{load_dataset, split_kfold, write_dataset, Format};
use proxbridge::env::{rollout, ActionSampler, BehaviorSpec, EnvSpec};

fn batch(n: usize, horizon: usize, seed: u64) -> proxbridge::data::Dataset {
    let behavior = BehaviorSpec::default();
    rollout(&EnvSpec::default(), ActionSampler::Behavior(&behavior), n, horizon, 0.9, seed).unwrap()
}

#[test]
fn csv_and_jsonl_round_trip_exactly() {
    let d = batch(3, 4, 5);
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("d.csv", Format::Csv), ("d.jsonl", Format::Jsonl)] {
        let path = dir.path().join(name);
        write_dataset(&d, &path, format).unwrap();
        assert_eq!(Format::from_path(&path), format);
        let back = load_dataset(&path, format, *d.schema()).unwrap();
        assert_eq!(back, d, "{name}");
    }
}

#[test]
fn rollout_is_seed_deterministic() {
    assert_eq!(batch(4, 5, 17), batch(4, 5, 17));
    assert_ne!(batch(4, 5, 17), batch(4, 5, 18));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kfold_partitions_trajectories(n in 2usize..12, k_raw in 2usize..12, seed in 0u64..1000) {
        let k = k_raw.min(n);
        let d = batch(n, 2, seed);
        let folds = split_kfold(&d, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen: Vec<usize> = folds.iter().flat_map(|f| f.validation_indices.clone()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(|f| f.validation.n()).collect();
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(sizes[0] - sizes[k - 1] <= 1);
        for f in &folds {
            prop_assert_eq!(f.train.n() + f.validation.n(), n);
            for &i in &f.validation_indices {
                prop_assert!(!f.train.trajectories().contains(&d.trajectories()[i]));
            }
        }
    }
}
