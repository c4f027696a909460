use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

pub const TRAIN_RATIO: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Patient → split assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub assignments: BTreeMap<String, Split>,
}

impl SplitManifest {
    pub fn split_of(&self, patient: &str) -> Option<Split> {
        self.assignments.get(patient).copied()
    }

    pub fn patients(&self, split: Split) -> BTreeSet<&str> {
        self.assignments
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Shuffles the distinct patient ids with a seeded stream and sends the
/// first `⌈ratio · P⌉` to training.
pub fn split_by_patient<S: AsRef<str>>(patients: impl IntoIterator<Item = S>, ratio: f64, seed: u64) -> SplitManifest {
    let unique: BTreeSet<String> = patients.into_iter().map(|p| p.as_ref().to_string()).collect();
    let mut ids: Vec<String> = unique.into_iter().collect();
    ids.shuffle(&mut rng::stream(seed, streams::SPLIT, 0));
    let n_train = ((ratio * ids.len() as f64 - 1e-9).ceil().max(0.0) as usize).min(ids.len());
    let assignments = ids
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, if i < n_train { Split::Train } else { Split::Test }))
        .collect();
    SplitManifest {
        seed,
        ratio,
        assignments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_patients_eight_two() {
        let ids: Vec<String> = (0..10).map(|i| format!("P{i}")).collect();
        let m = split_by_patient(&ids, TRAIN_RATIO, 3);
        assert_eq!(m.patients(Split::Train).len(), 8);
        assert_eq!(m.patients(Split::Test).len(), 2);
        assert_eq!(m, split_by_patient(&ids, TRAIN_RATIO, 3));
    }

    proptest! {
        #[test]
        fn records_of_a_patient_share_a_split(
            records in proptest::collection::vec(0u32..30, 1..200), seed: u64,
        ) {
            let ids: Vec<String> = records.iter().map(|r| format!("P{r}")).collect();
            let m = split_by_patient(&ids, TRAIN_RATIO, seed);
            let train = m.patients(Split::Train);
            let test = m.patients(Split::Test);
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(train.len() + test.len(), m.assignments.len());
            for id in &ids {
                prop_assert!(m.split_of(id).is_some());
            }
        }
    }
}
