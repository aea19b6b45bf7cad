use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// How to carve a response set into train and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    /// Ids that must never land in test (e.g. responses discussed during IRR).
    #[serde(default)]
    pub withheld_from_test: BTreeSet<String>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed: 0,
            withheld_from_test: BTreeSet::new(),
        }
    }
}

impl SplitSpec {
    /// Short stable fingerprint used in split ids.
    pub fn fingerprint(&self) -> String {
        let doc = serde_json::to_vec(self).expect("split spec serializes");
        hex::encode(&Sha256::digest(&doc)[..6])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    FractionOutOfRange(f64),
    #[error("withheld id {0:?} is not in the response set")]
    WithheldIdUnknown(String),
    #[error("need at least two responses to split, got {0}")]
    TooFewResponses(usize),
    #[error("duplicate response id {0:?}")]
    DuplicateId(String),
    #[error("{withheld} withheld ids leave fewer than {test_size} candidates for a test set of {total}")]
    TooManyWithheld {
        withheld: usize,
        test_size: usize,
        total: usize,
    },
}

/// `round(fraction * n)` with halves rounded up.
///
/// A small epsilon absorbs binary representation error so that products
/// like `0.7 * 5` (stored as 3.4999…) still round up.
pub fn round_half_up(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 0.5 + 1e-9).floor() as usize
}

/// Deterministic seeded split.
///
/// The test size is fixed from `test_fraction` before withholding. Ids are
/// sorted, shuffled with the seed, and test is filled from the front of the
/// shuffle skipping withheld ids, so every withheld id ends up in train.
pub fn split_dataset<S: AsRef<str>>(ids: &[S], spec: &SplitSpec) -> Result<Split, SplitError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(SplitError::FractionOutOfRange(spec.test_fraction));
    }
    let mut sorted: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(SplitError::DuplicateId(w[0].to_string()));
    }
    let n = sorted.len();
    if n < 2 {
        return Err(SplitError::TooFewResponses(n));
    }
    for w in &spec.withheld_from_test {
        if sorted.binary_search(&w.as_str()).is_err() {
            return Err(SplitError::WithheldIdUnknown(w.clone()));
        }
    }
    let test_size = round_half_up(spec.test_fraction, n);
    let withheld = spec.withheld_from_test.len();
    if n - withheld < test_size {
        return Err(SplitError::TooManyWithheld {
            withheld,
            test_size,
            total: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sorted.shuffle(&mut rng);

    let mut test = Vec::with_capacity(test_size);
    let mut train = Vec::with_capacity(n - test_size);
    for id in sorted {
        if test.len() < test_size && !spec.withheld_from_test.contains(id) {
            test.push(id.to_string());
        } else {
            train.push(id.to_string());
        }
    }
    train.sort();
    test.sort();
    Ok(Split { train, test })
}
