use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubjectInfo {
    pub id: u32,
    /// Saw every fixed dot location; required for validation and test subjects.
    pub complete_fixed_set: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSets {
    pub train: BTreeSet<u32>,
    pub val: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

/// Subject-exclusive train/validation/test split.
///
/// Subjects are shuffled once under `seed`; validation then test take the
/// first eligible subjects in that order, train takes the next `n_train` of
/// whatever remains.
pub fn split_subjects(
    subjects: &[SubjectInfo],
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitSets> {
    let unique: BTreeSet<u32> = subjects.iter().map(|s| s.id).collect();
    if unique.len() != subjects.len() {
        return Err(Error::Config("duplicate subject ids in split input".into()));
    }
    if n_train + n_val + n_test > subjects.len() {
        return Err(Error::Config(format!(
            "split {n_train}/{n_val}/{n_test} needs {} subjects, only {} available",
            n_train + n_val + n_test,
            subjects.len()
        )));
    }
    let eligible = subjects.iter().filter(|s| s.complete_fixed_set).count();
    if n_val + n_test > eligible {
        return Err(Error::Config(format!(
            "validation + test need {} subjects with complete fixed-dot sets, only {eligible} available",
            n_val + n_test
        )));
    }

    let mut order: Vec<SubjectInfo> = subjects.to_vec();
    order.sort_by_key(|s| s.id);
    order.shuffle(&mut stream(seed, &[tag::SPLIT]));

    let mut sets = SplitSets::default();
    let mut rest = Vec::new();
    for s in order {
        if s.complete_fixed_set && sets.val.len() < n_val {
            sets.val.insert(s.id);
        } else if s.complete_fixed_set && sets.test.len() < n_test {
            sets.test.insert(s.id);
        } else {
            rest.push(s.id);
        }
    }
    sets.train.extend(rest.into_iter().take(n_train));
    Ok(sets)
}
