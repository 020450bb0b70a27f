//! Seeded k-fold assignment.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{Error, Result};

/// Fold index of every id. Rows are sorted by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<(String, usize)>,
}

pub fn make_folds(set: &SampleSet, k: usize, seed: u64) -> Result<FoldPlan> {
    make_folds_for_ids(&set.ids(), k, seed)
}

/// Sorts the ids, shuffles them with `seed`, then deals them round-robin.
/// The first `n mod k` folds receive one extra id.
pub fn make_folds_for_ids(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Config(format!(
            "{} samples cannot fill {k} folds",
            ids.len()
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("duplicate ids in fold input".into()));
    }
    let mut order = sorted.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments: Vec<(String, usize)> = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i % k))
        .collect();
    assignments.sort();
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments
            .binary_search_by(|(i, _)| i.as_str().cmp(id))
            .ok()
            .map(|p| self.assignments[p].1)
    }

    pub fn validation_ids(&self, fold: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, f)| *f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn training_ids(&self, fold: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, f)| *f != fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for (_, f) in &self.assignments {
            sizes[*f] += 1;
        }
        sizes
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,fold\n");
        for (id, f) in &self.assignments {
            s.push_str(&format!("{id},{f}\n"));
        }
        s
    }

    /// Parses the `id,fold` CSV. `k` is inferred and the seed is unknown (0).
    pub fn from_csv(text: &str) -> Result<FoldPlan> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("id,fold") {
            return Err(Error::Data("fold CSV must start with the header id,fold".into()));
        }
        let mut assignments = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (id, f) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::Data(format!("fold CSV line {}: {line:?}", n + 2)))?;
            let f: usize = f
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("fold CSV line {}: bad fold {f:?}", n + 2)))?;
            assignments.push((id.to_string(), f));
        }
        assignments.sort();
        let k = assignments.iter().map(|(_, f)| f + 1).max().unwrap_or(0);
        Ok(FoldPlan {
            k,
            seed: 0,
            assignments,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:03}")).collect()
    }

    #[test]
    fn ten_into_five() {
        let plan = make_folds_for_ids(&ids(10), 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
        let plan = make_folds_for_ids(&ids(11), 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut rev = ids(17);
        rev.reverse();
        assert_eq!(
            make_folds_for_ids(&rev, 4, 9).unwrap(),
            make_folds_for_ids(&ids(17), 4, 9).unwrap()
        );
        assert_ne!(
            make_folds_for_ids(&ids(17), 4, 9).unwrap(),
            make_folds_for_ids(&ids(17), 4, 10).unwrap()
        );
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let plan = make_folds_for_ids(&ids(7), 3, 2).unwrap();
        let back = FoldPlan::from_csv(&plan.to_csv()).unwrap();
        assert_eq!(back.assignments, plan.assignments);
        assert!(make_folds_for_ids(&ids(3), 4, 0).is_err());
        assert!(make_folds_for_ids(&ids(3), 1, 0).is_err());
    }
}
