use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{strip_propagation, Label, NewsSample};
use crate::error::{Result, SanError};

/// Audit record of how a split was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitDescriptor {
    General {
        seed: u64,
        train_ratio: f64,
        stratified: bool,
        test_ids: Vec<String>,
    },
    EventAware {
        held_out_event: String,
        test_ids: Vec<String>,
    },
}

impl SplitDescriptor {
    pub fn test_ids(&self) -> &[String] {
        match self {
            SplitDescriptor::General { test_ids, .. } | SplitDescriptor::EventAware { test_ids, .. } => test_ids,
        }
    }
}

/// Train/test partition of a corpus. The test side still carries its
/// trees; [`DatasetSplit::cold_start`] removes them.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<NewsSample>,
    pub test: Vec<NewsSample>,
    pub provenance: SplitDescriptor,
}

impl DatasetSplit {
    /// The same split with every test tree removed.
    pub fn cold_start(mut self) -> DatasetSplit {
        self.test = strip_propagation(&self.test);
        self
    }

    /// Rebuilds a split from a corpus and the test ids of a descriptor.
    pub fn from_descriptor(samples: &[NewsSample], provenance: SplitDescriptor) -> Result<DatasetSplit> {
        let wanted: BTreeSet<&str> = provenance.test_ids().iter().map(String::as_str).collect();
        let (test, train): (Vec<_>, Vec<_>) = samples.iter().cloned().partition(|s| wanted.contains(s.id.as_str()));
        if test.len() != wanted.len() {
            return Err(SanError::Data(format!(
                "split lists {} test ids but only {} exist in the corpus",
                wanted.len(),
                test.len()
            )));
        }
        Ok(DatasetSplit { train, test, provenance })
    }
}

/// `round(ratio * n)` with halves rounded up, kept inside `[1, n-1]`.
pub fn train_count(n: usize, train_ratio: f64) -> usize {
    let raw = (train_ratio * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded random train/test split.
pub fn split_general(samples: &[NewsSample], train_ratio: f64, seed: u64) -> Result<DatasetSplit> {
    split_general_with(samples, train_ratio, seed, false)
}

/// Like [`split_general`]; with `stratified`, each label is split
/// separately so both sides keep the class balance.
pub fn split_general_with(samples: &[NewsSample], train_ratio: f64, seed: u64, stratified: bool) -> Result<DatasetSplit> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(SanError::Config(format!("train ratio must lie in (0, 1), got {train_ratio}")));
    }
    if samples.len() < 2 {
        return Err(SanError::InsufficientData(format!(
            "need at least 2 samples to split, got {}",
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let groups: Vec<Vec<usize>> = if stratified {
        let mut by_label: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_label.entry(s.label).or_default().push(i);
        }
        by_label.into_values().collect()
    } else {
        vec![(0..samples.len()).collect()]
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let k = if group.len() < 2 {
            group.len()
        } else {
            train_count(group.len(), train_ratio)
        };
        train_idx.extend_from_slice(&group[..k]);
        test_idx.extend_from_slice(&group[k..]);
    }
    let train: Vec<NewsSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let test: Vec<NewsSample> = test_idx.iter().map(|&i| samples[i].clone()).collect();
    if test.is_empty() {
        return Err(SanError::InsufficientData("split left the test set empty".into()));
    }
    Ok(DatasetSplit {
        provenance: SplitDescriptor::General {
            seed,
            train_ratio,
            stratified,
            test_ids: test.iter().map(|s| s.id.clone()).collect(),
        },
        train,
        test,
    })
}

/// Distinct event tags in sorted order; errors if any sample lacks one.
pub fn events(samples: &[NewsSample]) -> Result<Vec<String>> {
    let mut set = BTreeSet::new();
    for s in samples {
        match &s.event {
            Some(e) => {
                set.insert(e.clone());
            }
            None => return Err(SanError::Data(format!("sample {} has no event tag", s.id))),
        }
    }
    Ok(set.into_iter().collect())
}

/// Leave-one-event-out split: the held-out event is the test set.
pub fn split_event_aware(samples: &[NewsSample], held_out_event: &str) -> Result<DatasetSplit> {
    let available = events(samples)?;
    if !available.iter().any(|e| e == held_out_event) {
        return Err(SanError::UnknownEvent {
            requested: held_out_event.to_string(),
            available,
        });
    }
    let (test, train): (Vec<_>, Vec<_>) = samples
        .iter()
        .cloned()
        .partition(|s| s.event.as_deref() == Some(held_out_event));
    if train.is_empty() {
        return Err(SanError::InsufficientData(format!(
            "holding out {held_out_event} leaves no training events"
        )));
    }
    Ok(DatasetSplit {
        provenance: SplitDescriptor::EventAware {
            held_out_event: held_out_event.to_string(),
            test_ids: test.iter().map(|s| s.id.clone()).collect(),
        },
        train,
        test,
    })
}
