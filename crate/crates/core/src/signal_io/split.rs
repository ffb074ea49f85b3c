use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Cross-validation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitProtocol {
    /// One fold per subject; `n_validation` of the remaining subjects are
    /// held out for model selection.
    LeaveOneSubjectOut { n_validation: usize },
    /// `k` test groups of (near) equal size.
    KFold { k: usize, n_validation: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    /// Checks pairwise disjointness within folds and that every subject is
    /// tested exactly once.
    pub fn validate(&self, subjects: &[String]) -> Result<()> {
        let all: BTreeSet<&String> = subjects.iter().collect();
        let mut tested = BTreeSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for s in f.train.iter().chain(&f.validation).chain(&f.test) {
                if !seen.insert(s) {
                    return Err(Error::invalid(format!("fold {i}: subject `{s}` appears twice")));
                }
                if !all.contains(s) {
                    return Err(Error::invalid(format!("fold {i}: unknown subject `{s}`")));
                }
            }
            if seen.len() != all.len() {
                return Err(Error::invalid(format!("fold {i} does not cover every subject")));
            }
            for s in &f.test {
                if !tested.insert(s) {
                    return Err(Error::invalid(format!("subject `{s}` tested twice")));
                }
            }
        }
        if tested.len() != all.len() {
            return Err(Error::invalid("some subjects are never tested"));
        }
        Ok(())
    }
}

fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn split_remaining(rest: &[String], n_validation: usize, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let mut rest = rest.to_vec();
    rest.shuffle(rng);
    let validation: Vec<String> = rest[..n_validation].to_vec();
    let mut train = rest[n_validation..].to_vec();
    train.sort();
    let mut validation = validation;
    validation.sort();
    (train, validation)
}

/// Builds a deterministic (given `seed`) cross-validation plan.
pub fn make_split_plan(subject_ids: &[String], protocol: SplitProtocol, seed: u64) -> Result<SplitPlan> {
    let mut subjects = subject_ids.to_vec();
    subjects.sort();
    let n = subjects.len();
    if subjects.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate subject ids"));
    }
    let test_groups: Vec<Vec<String>> = match protocol {
        SplitProtocol::LeaveOneSubjectOut { n_validation } => {
            if n < n_validation + 2 {
                return Err(Error::TooFewSubjects(format!(
                    "{n} subjects cannot give 1 test, {n_validation} validation and at least 1 training subject"
                )));
            }
            subjects.iter().map(|s| vec![s.clone()]).collect()
        }
        SplitProtocol::KFold { k, n_validation } => {
            if k < 2 || k > n {
                return Err(Error::TooFewSubjects(format!("{n} subjects cannot form {k} folds")));
            }
            let largest = n.div_ceil(k);
            if n < largest + n_validation + 1 {
                return Err(Error::TooFewSubjects(format!(
                    "{n} subjects cannot give {largest} test, {n_validation} validation and at least 1 training subject"
                )));
            }
            let mut shuffled = subjects.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let base = n / k;
            let extra = n % k;
            let mut groups = Vec::with_capacity(k);
            let mut at = 0;
            for i in 0..k {
                let size = base + usize::from(i < extra);
                let mut g = shuffled[at..at + size].to_vec();
                g.sort();
                groups.push(g);
                at += size;
            }
            groups
        }
    };
    let n_validation = match protocol {
        SplitProtocol::LeaveOneSubjectOut { n_validation } | SplitProtocol::KFold { n_validation, .. } => n_validation,
    };
    let folds = test_groups
        .into_iter()
        .enumerate()
        .map(|(i, test)| {
            let rest: Vec<String> = subjects.iter().filter(|s| !test.contains(s)).cloned().collect();
            let (train, validation) = split_remaining(&rest, n_validation, &mut fold_rng(seed, i));
            Fold {
                train,
                validation,
                test,
            }
        })
        .collect();
    let plan = SplitPlan { folds };
    plan.validate(&subjects)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:03}")).collect()
    }

    #[test]
    fn loso_twenty_subjects() {
        let plan = make_split_plan(&ids(20), SplitProtocol::LeaveOneSubjectOut { n_validation: 4 }, 1).unwrap();
        assert_eq!(plan.folds.len(), 20);
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (15, 4, 1));
        }
    }

    #[test]
    fn kfold_two_hundred_subjects() {
        let plan = make_split_plan(
            &ids(200),
            SplitProtocol::KFold {
                k: 20,
                n_validation: 10,
            },
            3,
        )
        .unwrap();
        assert_eq!(plan.folds.len(), 20);
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (180, 10, 10));
        }
    }

    #[test]
    fn too_few_subjects() {
        assert!(matches!(
            make_split_plan(&ids(2), SplitProtocol::LeaveOneSubjectOut { n_validation: 4 }, 0),
            Err(Error::TooFewSubjects(_))
        ));
        assert!(make_split_plan(&ids(3), SplitProtocol::KFold { k: 4, n_validation: 0 }, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let p = SplitProtocol::KFold { k: 4, n_validation: 3 };
        assert_eq!(
            make_split_plan(&ids(20), p, 9).unwrap(),
            make_split_plan(&ids(20), p, 9).unwrap()
        );
        assert_ne!(
            make_split_plan(&ids(20), p, 9).unwrap(),
            make_split_plan(&ids(20), p, 10).unwrap()
        );
    }

    proptest! {
        #[test]
        fn folds_partition_subjects(n in 3usize..40, k in 2usize..8, v in 0usize..4, seed in any::<u64>()) {
            let subjects = ids(n);
            for p in [SplitProtocol::KFold { k, n_validation: v }, SplitProtocol::LeaveOneSubjectOut { n_validation: v }] {
                if let Ok(plan) = make_split_plan(&subjects, p, seed) {
                    plan.validate(&subjects).unwrap();
                    for f in &plan.folds {
                        prop_assert_eq!(f.train.len() + f.validation.len() + f.test.len(), n);
                        prop_assert!(!f.train.is_empty());
                    }
                }
            }
        }
    }
}
