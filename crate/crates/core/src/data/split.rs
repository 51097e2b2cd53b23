use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RngSeed;
use crate::nn::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: RngSeed,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let open = |f: f64| f > 0.0 && f < 1.0;
        if !open(self.train_fraction) || !open(self.validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "split fractions must lie in (0, 1), got train={} validation={}",
                self.train_fraction, self.validation_fraction
            )));
        }
        if self.train_fraction + self.validation_fraction > 1.0 {
            return Err(Error::InvalidConfig("split fractions sum to more than 1".into()));
        }
        Ok(())
    }

    /// Shuffled index partition `(train, validation, test)`.
    ///
    /// Sizes are `round(J * train)`, `round(J * validation)`, and the rest.
    pub fn indices(&self, samples: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let n_train = (samples as f64 * self.train_fraction).round() as usize;
        let n_val = (samples as f64 * self.validation_fraction).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= samples {
            return Err(Error::InvalidConfig(format!(
                "split of {samples} samples leaves an empty partition (train={n_train}, validation={n_val})"
            )));
        }
        let mut order: Vec<usize> = (0..samples).collect();
        order.shuffle(&mut self.seed.rng());
        let test = order.split_off(n_train + n_val);
        let val = order.split_off(n_train);
        Ok((order, val, test))
    }
}

/// Disjoint, exhaustive, seed-deterministic `(train, validation, test)` split.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = spec.indices(data.len())?;
    Ok((data.subset(&tr), data.subset(&va), data.subset(&te)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: 0.8,
            validation_fraction: 0.1,
            seed: RngSeed(seed),
        }
    }

    #[test]
    fn sizes_80_10_10() {
        let (a, b, c) = spec(0).indices(100).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let (a, b, c) = spec(5).indices(37).unwrap();
        let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic() {
        assert_eq!(spec(3).indices(50).unwrap(), spec(3).indices(50).unwrap());
        assert_ne!(spec(3).indices(50).unwrap(), spec(4).indices(50).unwrap());
    }

    #[test]
    fn rejects_empty_partitions_and_bad_fractions() {
        assert!(spec(0).indices(3).is_err());
        let bad = SplitSpec {
            train_fraction: 0.9,
            validation_fraction: 0.2,
            seed: RngSeed(0),
        };
        assert!(bad.indices(100).is_err());
        let zero = SplitSpec {
            train_fraction: 0.9,
            validation_fraction: 0.0,
            seed: RngSeed(0),
        };
        assert!(zero.indices(100).is_err());
    }
}
