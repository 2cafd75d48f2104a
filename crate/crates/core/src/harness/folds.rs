//! Stratified k-fold assignment with an inner train/validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::preprocess::OSClass;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InnerSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Indices refer to the subject list passed to [`make_folds`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index of every subject.
    pub assignment: Vec<usize>,
    pub inner: Vec<InnerSplit>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }
}

fn by_class(labels: &[OSClass], members: impl Iterator<Item = usize>) -> [Vec<usize>; OSClass::COUNT] {
    let mut out: [Vec<usize>; OSClass::COUNT] = Default::default();
    for i in members {
        out[labels[i].index()].push(i);
    }
    out
}

/// Stratified assignment: each class is shuffled and dealt round-robin, the
/// deal continuing across classes so fold sizes differ by at most one.
/// The training portion of each fold is split `1 - val_fraction` /
/// `val_fraction` per class.
pub fn make_folds(labels: &[OSClass], k: usize, val_fraction: f64, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Validation(format!("{} subjects cannot fill {k} folds", labels.len())));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = by_class(labels, 0..labels.len());
    for (c, members) in classes.iter_mut().enumerate() {
        if members.len() < k {
            log::warn!(
                "class {} has {} subjects, fewer than {k} folds; stratification is best-effort",
                OSClass::from_index(c).unwrap(),
                members.len()
            );
        }
        members.shuffle(&mut rng);
    }
    let mut assignment = vec![0; labels.len()];
    for (pos, &i) in classes.iter().flatten().enumerate() {
        assignment[i] = pos % k;
    }
    let inner = (0..k)
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(f as u64 + 1);
            let mut split = InnerSplit { train: Vec::new(), val: Vec::new() };
            let rest = (0..labels.len()).filter(|&i| assignment[i] != f);
            for mut members in by_class(labels, rest) {
                members.shuffle(&mut rng);
                let n_val = (members.len() as f64 * val_fraction).round() as usize;
                split.val.extend_from_slice(&members[..n_val]);
                split.train.extend_from_slice(&members[n_val..]);
            }
            split.train.sort_unstable();
            split.val.sort_unstable();
            split
        })
        .collect();
    Ok(FoldPlan { k, assignment, inner })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn labels(counts: [usize; 3]) -> Vec<OSClass> {
        let mut v = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            v.extend(std::iter::repeat(OSClass::from_index(c).unwrap()).take(n));
        }
        v
    }

    #[test]
    fn balanced_thirty_gives_one_per_class_per_fold() {
        let l = labels([10, 10, 10]);
        let plan = make_folds(&l, 10, 0.2, 1).unwrap();
        for f in 0..10 {
            let mut classes: Vec<usize> = plan.test_indices(f).iter().map(|&i| l[i].index()).collect();
            classes.sort();
            assert_eq!(classes, vec![0, 1, 2]);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let l = labels([20, 7, 13]);
        assert_eq!(make_folds(&l, 10, 0.2, 5).unwrap(), make_folds(&l, 10, 0.2, 5).unwrap());
        assert_ne!(make_folds(&l, 10, 0.2, 5).unwrap(), make_folds(&l, 10, 0.2, 6).unwrap());
    }

    #[test]
    fn cohort_of_163_partitions() {
        let l = labels([65, 40, 58]);
        let plan = make_folds(&l, 10, 0.2, 2).unwrap();
        let mut all = HashSet::new();
        for f in 0..10 {
            let t = plan.test_indices(f);
            assert!(t.len() == 16 || t.len() == 17);
            for i in t {
                assert!(all.insert(i));
            }
            let inner = &plan.inner[f];
            assert_eq!(inner.train.len() + inner.val.len(), 163 - plan.test_indices(f).len());
            let inner_val: HashSet<_> = inner.val.iter().collect();
            assert!(inner.train.iter().all(|i| !inner_val.contains(i) && plan.assignment[*i] != f));
            let frac = inner.val.len() as f64 / (inner.train.len() + inner.val.len()) as f64;
            assert!((frac - 0.2).abs() < 0.02);
        }
        assert_eq!(all.len(), 163);
    }

    #[test]
    fn stratified_within_one_subject() {
        let l = labels([50, 11, 39]);
        let plan = make_folds(&l, 10, 0.2, 3).unwrap();
        for f in 0..10 {
            let test = plan.test_indices(f);
            for c in 0..3 {
                let global = l.iter().filter(|x| x.index() == c).count() as f64 / l.len() as f64;
                let here = test.iter().filter(|&&i| l[i].index() == c).count() as f64;
                assert!((here - global * test.len() as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn too_few_subjects_is_an_error() {
        assert!(make_folds(&labels([3, 3, 2]), 10, 0.2, 0).is_err());
        // sparse class only warns
        assert!(make_folds(&labels([10, 2, 10]), 10, 0.2, 0).is_ok());
    }
}
