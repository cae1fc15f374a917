use micseg_core::seeds::{rng_stream, DOMAIN_SPLIT};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

/// Disjoint, exhaustive partition of case ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Deterministic shuffled split. The train side gets `round(fraction * n)`
/// cases, clamped so both sides stay nonempty.
pub fn make_split(ids: &[String], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if ids.len() < 2 {
        return Err(DataError::TooFewCases(ids.len()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(DataError::Config(format!(
            "train fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = rng_stream(seed, DOMAIN_SPLIT, 0);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case{i:03}")).collect()
    }

    #[test]
    fn twenty_cases_split_sixteen_four() {
        let s = make_split(&ids(20), 0.8, 5).unwrap();
        assert_eq!(s.train.len(), 16);
        assert_eq!(s.test.len(), 4);
    }

    #[test]
    fn split_is_a_partition() {
        let all = ids(13);
        let s = make_split(&all, 0.7, 2).unwrap();
        let train: BTreeSet<_> = s.train.iter().collect();
        let test: BTreeSet<_> = s.test.iter().collect();
        assert!(train.is_disjoint(&test));
        let mut union: Vec<_> = s.train.iter().chain(&s.test).cloned().collect();
        union.sort();
        assert_eq!(union, all);
    }

    #[test]
    fn same_seed_same_split() {
        let all = ids(9);
        assert_eq!(
            make_split(&all, 0.5, 31).unwrap(),
            make_split(&all, 0.5, 31).unwrap()
        );
        assert_ne!(
            make_split(&all, 0.5, 31).unwrap(),
            make_split(&all, 0.5, 32).unwrap()
        );
    }

    #[test]
    fn extremes_keep_both_sides_nonempty() {
        let s = make_split(&ids(5), 1.0, 0).unwrap();
        assert_eq!(s.test.len(), 1);
        let s = make_split(&ids(5), 0.0, 0).unwrap();
        assert_eq!(s.train.len(), 1);
    }

    #[test]
    fn one_case_is_too_few() {
        assert!(matches!(
            make_split(&ids(1), 0.8, 0).unwrap_err(),
            DataError::TooFewCases(1)
        ));
    }
}
