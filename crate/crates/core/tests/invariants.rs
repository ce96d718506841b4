use emix_core::learner::*;
use ndarray::Array2;
use proptest::prelude::*;

fn matrices(rows: usize, cols: usize, m: usize) -> impl Strategy<Value = Vec<Array2<f64>>> {
    prop::collection::vec(prop::collection::vec(-1e6f64..1e6, rows * cols), m)
        .prop_map(move |vs| vs.into_iter().map(|v| Array2::from_shape_vec((rows, cols), v).unwrap()).collect())
}

fn episode(len: usize, seed: u64) -> Episode {
    let v = |k: usize, n: usize| (0..n).map(|j| ((seed + 7 * k as u64 + j as u64) % 11) as f64 / 11.0).collect::<Vec<f64>>();
    Episode {
        states: (0..=len).map(|k| v(k, 5)).collect(),
        observations: (0..=len).map(|k| vec![v(k, 3), v(k + 1, 3)]).collect(),
        actions: (0..len).map(|k| vec![k % 3, (k + seed as usize) % 3]).collect(),
        rewards: (0..len).map(|k| k as f64 - 1.0).collect(),
        terminated: (0..len).map(|k| k + 1 == len).collect(),
        success: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn min_reduction_dominated_by_every_target(ts in (1usize..5, 1usize..4, 1usize..5).prop_flat_map(|(r, c, m)| matrices(r, c, m))) {
        let min = min_over_targets(&ts).unwrap();
        for t in &ts {
            prop_assert!(min.iter().zip(t.iter()).all(|(a, b)| a <= b));
        }
        for (i, v) in min.iter().enumerate() {
            prop_assert!(ts.iter().any(|t| t.as_slice().unwrap()[i] == *v));
        }
    }

    #[test]
    fn batch_mask_counts_real_steps(lens in prop::collection::vec(1usize..9, 1..6), seed in 0u64..1000) {
        let eps: Vec<Episode> = lens.iter().map(|&l| episode(l, seed)).collect();
        let batch = EpisodeBatch::from_episodes(&eps.iter().collect::<Vec<_>>(), 3).unwrap();
        prop_assert_eq!(batch.max_t(), *lens.iter().max().unwrap());
        prop_assert_eq!(batch.valid_steps(), lens.iter().sum::<usize>());
        for (b, &l) in lens.iter().enumerate() {
            for t in 0..batch.max_t() {
                prop_assert_eq!(batch.mask[[b, t]], if t < l { 1.0 } else { 0.0 });
                if t >= l {
                    prop_assert_eq!(batch.rewards[[b, t]], 0.0);
                }
            }
        }
    }

    #[test]
    fn staggered_targets_each_sync_once_per_interval(m in 1usize..5, interval in 1u64..60, horizon in 1u64..400) {
        let online = emix_core::nn::ParamSet::new();
        let mut bank = TargetBank::new(m, &online, interval, SyncMode::Staggered).unwrap();
        let mut counts = vec![0u64; m];
        for t in 0..horizon {
            for i in bank.sync(t, &online).unwrap() {
                counts[i] += 1;
                prop_assert_eq!(t % interval, bank.offset(i) % interval);
            }
        }
        for (i, c) in counts.iter().enumerate() {
            let off = bank.offset(i);
            let expect = if horizon > off { (horizon - off - 1) / interval + 1 } else { 0 };
            prop_assert_eq!(*c, expect);
        }
    }
}
