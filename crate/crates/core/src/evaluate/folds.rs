use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FoldError {
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("{stations} stations cannot fill {k} folds")]
    TooFewStations { stations: usize, k: usize },
}

/// Station-to-fold map. Stations absent from the map are never masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub seed: u64,
    pub k: usize,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// Station ids per fold, sorted.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k];
        for (s, &f) in &self.fold_of {
            out[f].push(s.as_str());
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }
}

/// Shuffles the distinct station ids with a seeded ChaCha8 stream, then deals
/// them round-robin into `k` folds.
pub fn make_folds<S: AsRef<str>>(station_ids: &[S], k: usize, seed: u64) -> Result<FoldAssignment, FoldError> {
    if k < 2 {
        return Err(FoldError::TooFewFolds(k));
    }
    let mut ids: Vec<&str> = station_ids.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < k {
        return Err(FoldError::TooFewStations {
            stations: ids.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let fold_of = ids
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();
    Ok(FoldAssignment { seed, k, fold_of })
}
