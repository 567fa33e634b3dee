use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

/// Patient-level assignment to train/val/test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    assignments: Vec<(String, Split)>,
}

impl SplitManifest {
    /// Fails on duplicate ids, so every manifest is a partition. Stored sorted by id.
    pub fn from_assignments(mut assignments: Vec<(String, Split)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, _) in &assignments {
            if !seen.insert(id.as_str()) {
                return Err(Error::Contract(format!(
                    "patient {id} assigned more than once"
                )));
            }
        }
        assignments.sort();
        Ok(Self { assignments })
    }

    pub fn assignments(&self) -> &[(String, Split)] {
        &self.assignments
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.assignments
            .iter()
            .find(|(i, _)| i == id)
            .map(|(_, s)| *s)
    }

    /// `(train, val, test)` patient counts.
    pub fn sizes(&self) -> (usize, usize, usize) {
        let n = |s| self.assignments.iter().filter(|(_, x)| *x == s).count();
        (n(Split::Train), n(Split::Val), n(Split::Test))
    }
}

/// Seeded shuffle, then contiguous train/val/test runs of
/// `round(f·n)`, `round(f·n)` and the remainder.
pub fn make_splits(ids: &[String], fractions: (f64, f64, f64), seed: u64) -> Result<SplitManifest> {
    if ids.is_empty() {
        return Err(Error::Contract("no patient ids to split".into()));
    }
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = ids.len();
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.clone(), s)
        })
        .collect();
    SplitManifest::from_assignments(assignments)
}
