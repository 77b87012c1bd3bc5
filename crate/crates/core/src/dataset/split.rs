//! Seeded train/val/test assignment.

use super::manifest::{PairRecord, Split};
use super::DatasetError;
use crate::rng;

/// Train/val/test fractions. All three must be positive and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DatasetError> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(DatasetError::BadRatios(format!(
                "every ratio must be positive, got {parts:?}"
            )));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadRatios(format!("ratios sum to {total}, not 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` records. Val and test take
    /// `floor(n * ratio)` (with a 1e-9 allowance for representation error);
    /// train takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let take = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let val = take(self.val);
        let test = take(self.test);
        (n - val - test, val, test)
    }
}

/// Shuffles record positions with the seeded generator, then assigns the
/// first block to train, the next to val and the rest to test. Records are
/// returned in their original order.
pub fn split_records(
    mut records: Vec<PairRecord>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<PairRecord>, DatasetError> {
    ratios.validate()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    rng::shuffle(&mut order, &mut rng::seeded(seed));
    let (train, val, _) = ratios.counts(records.len());
    for (pos, &idx) in order.iter().enumerate() {
        records[idx].split = Some(if pos < train {
            Split::Train
        } else if pos < train + val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(records)
}
