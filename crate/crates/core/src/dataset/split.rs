use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::seed::rng_for;

/// Fractions `[train, val, test]`, summing to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitRatio(pub [f64; 3]);

impl SplitRatio {
    pub const DEFAULT: SplitRatio = SplitRatio([0.6, 0.2, 0.2]);

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.0.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(DatasetError::InvalidRatio(format!(
                "fractions must be non-negative, got {:?}",
                self.0
            )));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidRatio(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Split sizes for `n` items: floor each share, then hand the remainder
    /// out one at a time in train, val, test order.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        // the epsilon keeps 0.29 * 100 = 28.999999999999996 from flooring to 28
        let mut sizes = self.0.map(|r| (r * n as f64 + 1e-9).floor() as usize);
        let assigned: usize = sizes.iter().sum();
        if assigned > n {
            // only reachable through the epsilon on degenerate inputs
            sizes[0] -= assigned - n;
        }
        let mut remainder = n - sizes.iter().sum::<usize>();
        let mut slot = 0;
        while remainder > 0 {
            sizes[slot % 3] += 1;
            remainder -= 1;
            slot += 1;
        }
        sizes
    }
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Disjoint train/val/test id lists.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub split_ratio: SplitRatio,
}

impl DatasetSplit {
    pub fn ids(&self, name: SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn ids_mut(&mut self, name: SplitName) -> &mut Vec<String> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Val => &mut self.val,
            SplitName::Test => &mut self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn len(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split_of(&self, id: &str) -> Option<SplitName> {
        SplitName::ALL
            .into_iter()
            .find(|s| self.ids(*s).iter().any(|x| x == id))
    }

    /// Pairs every id with its split, in train, val, test order.
    pub fn assignments(&self) -> impl Iterator<Item = (&str, SplitName)> {
        SplitName::ALL
            .into_iter()
            .flat_map(move |s| self.ids(s).iter().map(move |id| (id.as_str(), s)))
    }
}

/// Shuffles `ids` with a seed-derived stream and cuts it into three parts.
/// Each part is returned sorted so listings are stable.
pub fn split_dataset(
    ids: &[String],
    ratio: SplitRatio,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    ratio.validate()?;
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateId(id.clone()));
        }
    }

    let mut order: Vec<String> = ids.to_vec();
    // shuffle a canonical ordering so the caller's listing order does not matter
    order.sort();
    order.shuffle(&mut rng_for(seed, &["split"]));

    let [n_train, n_val, _] = ratio.sizes(order.len());
    let mut test = order.split_off(n_train + n_val);
    let mut val = order.split_off(n_train);
    let mut train = order;
    train.sort();
    val.sort();
    test.sort();
    Ok(DatasetSplit {
        train,
        val,
        test,
        split_ratio: ratio,
    })
}
