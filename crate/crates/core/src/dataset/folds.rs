use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Assignment of training storms to cross-validation folds, plus the
/// held-out test storms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    pub k: usize,
    /// `(storm_id, fold)` in the order the ids were supplied.
    pub assignments: Vec<(String, usize)>,
    pub test_ids: Vec<String>,
}

impl FoldSpec {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(s, _)| s == id)
            .map(|&(_, f)| f)
    }

    /// Validation storms of `fold`.
    pub fn members(&self, fold: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, f)| *f == fold)
            .map(|(s, _)| s.clone())
            .collect()
    }

    /// Training storms of `fold`: every non-test storm outside it.
    pub fn training(&self, fold: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, f)| *f != fold)
            .map(|(s, _)| s.clone())
            .collect()
    }

    /// All non-test storms.
    pub fn pool(&self) -> Vec<String> {
        self.assignments.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for (_, f) in &self.assignments {
            sizes[*f] += 1;
        }
        sizes
    }

    pub fn with_test_ids(mut self, test_ids: Vec<String>) -> Result<Self> {
        if let Some(t) = test_ids.iter().find(|t| self.fold_of(t).is_some()) {
            return Err(Error::Validation(format!("test storm {t} also assigned to a fold")));
        }
        self.test_ids = test_ids;
        Ok(self)
    }
}

/// Seeded shuffle followed by round-robin assignment.
pub fn make_folds(storm_ids: &[String], k: usize, seed: u64) -> Result<FoldSpec> {
    if k < 2 {
        return Err(Error::Validation(format!("need at least 2 folds, got {k}")));
    }
    if k > storm_ids.len() {
        return Err(Error::Validation(format!(
            "{k} folds requested for {} storms",
            storm_ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..storm_ids.len()).collect();
    order.shuffle(&mut rng_for(seed, "folds", 0));
    let mut fold = vec![0; storm_ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(FoldSpec {
        k,
        assignments: storm_ids.iter().cloned().zip(fold).collect(),
        test_ids: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("AL{i:02}2010")).collect()
    }

    #[test]
    fn seven_folds_of_thirty_one() {
        let f = make_folds(&ids(217), 7, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![31; 7]);
        assert_eq!(f.training(0).len(), 186);
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(make_folds(&ids(10), 2, 42).unwrap(), make_folds(&ids(10), 2, 42).unwrap());
        assert_ne!(
            make_folds(&ids(40), 2, 42).unwrap(),
            make_folds(&ids(40), 2, 43).unwrap()
        );
    }

    #[test]
    fn odd_split() {
        let mut sizes = make_folds(&ids(11), 2, 0).unwrap().fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![5, 6]);
    }

    #[test]
    fn too_many_folds() {
        assert!(make_folds(&ids(3), 4, 0).is_err());
        assert!(make_folds(&ids(3), 1, 0).is_err());
    }

    #[test]
    fn test_ids_must_be_disjoint() {
        let f = make_folds(&ids(4), 2, 0).unwrap();
        assert!(f.clone().with_test_ids(vec!["X".into()]).is_ok());
        assert!(f.with_test_ids(vec![ids(4)[0].clone()]).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(n in 2usize..80, k in 2usize..10, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let list = ids(n);
            let f = make_folds(&list, k, seed).unwrap();
            let sizes = f.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for id in &list {
                let in_folds = (0..k).filter(|&j| f.members(j).contains(id)).count();
                prop_assert_eq!(in_folds, 1);
            }
        }
    }
}
