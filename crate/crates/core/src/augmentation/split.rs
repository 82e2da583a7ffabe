use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::SegmentSet;
use super::{AugmentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Fixed,
    Random,
    City,
}

impl FromStr for SplitKind {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "random" => Ok(Self::Random),
            "city" => Ok(Self::City),
            other => Err(AugmentError::Strategy(format!("unknown split strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Random => "random",
            Self::City => "city",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStrategy {
    pub kind: SplitKind,
    pub seed: u64,
}

/// Deterministic per-iteration seeds derived from one base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedChain {
    pub base: u64,
}

impl SeedChain {
    pub fn new(base: u64) -> Self {
        Self { base }
    }

    /// Seed for iteration `k`, drawn from stream `k` of a generator keyed by the base.
    pub fn seed_for(&self, k: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base);
        rng.set_stream(k as u64);
        rng.next_u64()
    }
}

/// Index partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Halves `n` items (optionally grouped by city) for iteration `k`.
///
/// `fixed` reuses the strategy seed and swaps the halves on odd `k`.
/// `random` draws a fresh seed per iteration. `city` shuffles the cities with
/// a fresh seed and assigns them, largest first, to the subset with fewer
/// items so that no city lands on both sides.
pub fn split_indices(n: usize, cities: Option<&[usize]>, strategy: &SplitStrategy, k: usize) -> Result<Split> {
    match strategy.kind {
        SplitKind::Fixed | SplitKind::Random => {
            let seed = match strategy.kind {
                SplitKind::Fixed => strategy.seed,
                _ => SeedChain::new(strategy.seed).seed_for(k),
            };
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut test = order.split_off(n / 2);
            let mut train = order;
            train.sort_unstable();
            test.sort_unstable();
            if strategy.kind == SplitKind::Fixed && k % 2 == 1 {
                std::mem::swap(&mut train, &mut test);
            }
            Ok(Split { train, test, seed })
        }
        SplitKind::City => {
            let cities = cities.ok_or_else(|| AugmentError::Strategy("city split needs city labels".into()))?;
            if cities.len() != n {
                return Err(AugmentError::Strategy(format!(
                    "{} city labels for {n} items",
                    cities.len()
                )));
            }
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in cities.iter().enumerate() {
                groups.entry(c).or_default().push(i);
            }
            if groups.len() < 2 {
                return Err(AugmentError::Strategy(format!(
                    "city split needs at least 2 cities, found {}",
                    groups.len()
                )));
            }
            let seed = SeedChain::new(strategy.seed).seed_for(k);
            let mut order: Vec<usize> = groups.keys().copied().collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order.sort_by_key(|c| std::cmp::Reverse(groups[c].len()));
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for c in order {
                let side = if train.len() <= test.len() { &mut train } else { &mut test };
                side.extend_from_slice(&groups[&c]);
            }
            train.sort_unstable();
            test.sort_unstable();
            Ok(Split { train, test, seed })
        }
    }
}

pub fn split_dataset(set: &SegmentSet, strategy: &SplitStrategy, k: usize) -> Result<Split> {
    split_indices(set.len(), set.city.as_deref(), strategy, k)
}
