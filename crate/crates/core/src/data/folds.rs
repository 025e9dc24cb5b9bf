//! Ten-fold rotation: every class is shuffled and cut into ten deciles of
//! eight; fold `i` tests on decile `i`, validates on decile `(i + 1) mod 10`
//! and trains on the other eight.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{seeded_rng, Dataset, SplitSpec};
use crate::error::{Error, Result};

pub const FOLD_COUNT: usize = 10;
pub const PER_DECILE: usize = 8;
pub const PER_CLASS: usize = FOLD_COUNT * PER_DECILE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    /// `deciles[d]` holds decile `d` of every class, sorted.
    pub deciles: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_decile(fold: usize) -> usize {
        fold % FOLD_COUNT
    }

    pub fn val_decile(fold: usize) -> usize {
        (fold + 1) % FOLD_COUNT
    }

    pub fn fold(&self, fold: usize) -> Result<SplitSpec> {
        if fold >= FOLD_COUNT {
            return Err(Error::Validation(format!(
                "fold {fold} outside 0..{FOLD_COUNT}"
            )));
        }
        let (t, v) = (Self::test_decile(fold), Self::val_decile(fold));
        let mut train: Vec<usize> = (0..FOLD_COUNT)
            .filter(|&d| d != t && d != v)
            .flat_map(|d| self.deciles[d].iter().copied())
            .collect();
        train.sort_unstable();
        Ok(SplitSpec {
            train,
            val: self.deciles[v].clone(),
            test: self.deciles[t].clone(),
            seed: self.seed,
        })
    }
}

pub fn make_fold_plan(data: &Dataset, seed: u64) -> Result<FoldPlan> {
    let by_class = data.indices_by_class();
    if let Some((c, v)) = by_class
        .iter()
        .enumerate()
        .find(|(_, v)| v.len() != PER_CLASS)
    {
        return Err(Error::Validation(format!(
            "ten-fold plan needs exactly {PER_CLASS} samples per class, class {c} ({}) has {}",
            data.class_names[c],
            v.len()
        )));
    }
    let mut rng = seeded_rng(seed, 4);
    let mut deciles: Vec<Vec<usize>> = (0..FOLD_COUNT)
        .map(|_| Vec::with_capacity(PER_DECILE * data.num_classes))
        .collect();
    for mut members in by_class {
        members.shuffle(&mut rng);
        for (d, chunk) in members.chunks_exact(PER_DECILE).enumerate() {
            deciles[d].extend_from_slice(chunk);
        }
    }
    for d in &mut deciles {
        d.sort_unstable();
    }
    Ok(FoldPlan { seed, deciles })
}
