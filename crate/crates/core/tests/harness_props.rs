use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use survnet_core::harness::{evaluate, make_folds};
use survnet_core::preprocess::OSClass;

fn class() -> impl Strategy<Value = OSClass> {
    (0usize..3).prop_map(|i| OSClass::from_index(i).unwrap())
}

proptest! {
    #[test]
    fn metrics_ignore_subject_order(pairs in prop::collection::vec((class(), class()), 1..60), seed in any::<u64>()) {
        let (preds, labels): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let base = evaluate(&preds, &labels).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (p2, l2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(evaluate(&p2, &l2).unwrap(), base);
    }

    #[test]
    fn metrics_stay_in_range(pairs in prop::collection::vec((class(), class()), 1..60)) {
        let (preds, labels): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let m = evaluate(&preds, &labels).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f_score] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let hits = pairs.iter().filter(|(p, l)| p == l).count();
        prop_assert_eq!(m.accuracy, hits as f64 / pairs.len() as f64);
        prop_assert_eq!(m.confusion.iter().flatten().sum::<u64>(), pairs.len() as u64);
    }

    #[test]
    fn folds_partition_and_stratify(labels in prop::collection::vec(class(), 10..120), k in 2usize..11, seed in any::<u64>()) {
        prop_assume!(labels.len() >= k);
        let plan = make_folds(&labels, k, 0.2, seed).unwrap();
        prop_assert_eq!(plan.assignment.len(), labels.len());

        let sizes: Vec<usize> = (0..k).map(|f| plan.test_indices(f).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for c in 0..3 {
            let per_fold: Vec<usize> = (0..k)
                .map(|f| plan.test_indices(f).iter().filter(|&&i| labels[i].index() == c).count())
                .collect();
            prop_assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
        }

        for f in 0..k {
            let test = plan.test_indices(f);
            let split = &plan.inner[f];
            let mut seen: Vec<usize> = split.train.iter().chain(&split.val).chain(&test).copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
        }
        prop_assert_eq!(make_folds(&labels, k, 0.2, seed).unwrap().assignment, plan.assignment);
    }
}
