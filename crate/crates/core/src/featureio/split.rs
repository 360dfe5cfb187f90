//! Deterministic train/validation/test partitioning.
//!
//! Each side (in-distribution, out-of-distribution) is permuted with a
//! SplitMix64-driven Fisher–Yates shuffle; the first `n_train` permuted
//! indices form the training partition, the next `n_val` the validation
//! partition and the rest the test partition. Indices inside a partition
//! are returned in ascending order. Sampling is unstratified.
//!
//! The in-distribution side is shuffled with `SplitMix64::new(seed)`, the
//! out-of-distribution side with `SplitMix64::new(seed ^ OUT_SIDE_KEY)`.

use super::{FeatureIoError, FeatureSet, Result};
use crate::rng::permutation;

pub const OUT_SIDE_KEY: u64 = 0x6F75_745F_7369_6465; // "out_side"

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train_in: FeatureSet,
    pub train_out: FeatureSet,
    pub val_in: FeatureSet,
    pub val_out: FeatureSet,
    pub test_in: FeatureSet,
    pub test_out: FeatureSet,
}

/// Partitions `0..n` using a permutation seeded by `seed`.
pub fn split_indices(
    n: usize,
    n_train: usize,
    n_val: usize,
    seed: u64,
    side: &'static str,
) -> Result<SplitIndices> {
    let required = n_train + n_val;
    if required >= n {
        return Err(FeatureIoError::InsufficientSamples {
            side,
            available: n,
            required,
        });
    }
    let perm = permutation(n, seed);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(SplitIndices {
        train: sorted(&perm[..n_train]),
        val: sorted(&perm[n_train..required]),
        test: sorted(&perm[required..]),
    })
}

pub fn split_in_out(
    in_test: &FeatureSet,
    out_test: &FeatureSet,
    spec: SplitSpec,
) -> Result<Splits> {
    let a = split_indices(
        in_test.len(),
        spec.n_train,
        spec.n_val,
        spec.seed,
        "in-distribution",
    )?;
    let b = split_indices(
        out_test.len(),
        spec.n_train,
        spec.n_val,
        spec.seed ^ OUT_SIDE_KEY,
        "out-of-distribution",
    )?;
    Ok(Splits {
        train_in: in_test.select_rows(&a.train)?,
        val_in: in_test.select_rows(&a.val)?,
        test_in: in_test.select_rows(&a.test)?,
        train_out: out_test.select_rows(&b.train)?,
        val_out: out_test.select_rows(&b.val)?,
        test_out: out_test.select_rows(&b.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featureio::FeatureMatrix;
    use crate::rng::SplitMix64;
    use std::collections::BTreeSet;

    fn indexed_set(n: usize, ood: bool) -> FeatureSet {
        let m = FeatureMatrix::new(n, 1, (0..n).map(|i| i as f32).collect()).unwrap();
        if ood {
            FeatureSet::new_ood("out", 2, vec![("f".into(), m)]).unwrap()
        } else {
            FeatureSet::new(
                "in",
                2,
                (0..n as u32).map(|i| i % 2).collect(),
                vec![("f".into(), m)],
            )
            .unwrap()
        }
    }

    fn ids(set: &FeatureSet) -> Vec<usize> {
        set.layers()[0]
            .matrix
            .values()
            .iter()
            .map(|&v| v as usize)
            .collect()
    }

    #[test]
    fn four_sample_split() {
        let spec = SplitSpec {
            n_train: 1,
            n_val: 1,
            seed: 7,
        };
        let s = split_in_out(&indexed_set(4, false), &indexed_set(4, true), spec).unwrap();
        assert_eq!(s.test_in.len(), 2);
        assert_eq!(s.test_out.len(), 2);
        let mut all: Vec<usize> = [ids(&s.train_in), ids(&s.val_in), ids(&s.test_in)].concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(s.test_out.is_ood());
    }

    #[test]
    fn same_seed_same_partitions() {
        let spec = SplitSpec {
            n_train: 3,
            n_val: 2,
            seed: 99,
        };
        let a = split_in_out(&indexed_set(20, false), &indexed_set(15, true), spec).unwrap();
        let b = split_in_out(&indexed_set(20, false), &indexed_set(15, true), spec).unwrap();
        assert_eq!(ids(&a.train_in), ids(&b.train_in));
        assert_eq!(ids(&a.val_out), ids(&b.val_out));
        assert_eq!(ids(&a.test_in), ids(&b.test_in));
    }

    #[test]
    fn insufficient_samples() {
        let spec = SplitSpec {
            n_train: 2,
            n_val: 2,
            seed: 1,
        };
        let err = split_in_out(&indexed_set(10, false), &indexed_set(4, true), spec).unwrap_err();
        assert!(matches!(
            err,
            FeatureIoError::InsufficientSamples {
                side: "out-of-distribution",
                ..
            }
        ));
    }

    #[test]
    fn partitions_disjoint_and_exhaustive_over_random_runs() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..100 {
            let n = 3 + rng.below(60) as usize;
            let n_train = rng.below((n - 1) as u64) as usize;
            let n_val = rng.below((n - 1 - n_train) as u64) as usize;
            let s = split_indices(n, n_train, n_val, rng.next_u64(), "in").unwrap();
            assert_eq!(s.train.len(), n_train);
            assert_eq!(s.val.len(), n_val);
            assert!(!s.test.is_empty());
            let union: BTreeSet<usize> = s
                .train
                .iter()
                .chain(&s.val)
                .chain(&s.test)
                .copied()
                .collect();
            assert_eq!(union.len(), n, "partitions overlap");
            assert_eq!(union, (0..n).collect());
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_permutations() {
        let perms: BTreeSet<Vec<usize>> = (0..20u64).map(|s| permutation(50, s)).collect();
        assert_eq!(perms.len(), 20);
    }
}
