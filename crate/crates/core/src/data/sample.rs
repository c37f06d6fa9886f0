use std::fmt;

use serde::{Deserialize, Serialize};

use super::tree::PropagationTree;

/// Veracity label. Class index 0 is `Fake`, 1 is `Real`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fake,
    Real,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Fake => 0,
            Label::Real => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Fake
        } else {
            Label::Real
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fake => "fake",
            Label::Real => "real",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One news item: source content plus its propagation tree when available.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsSample {
    pub id: String,
    pub x: Vec<f64>,
    pub tree: Option<PropagationTree>,
    pub label: Label,
    pub event: Option<String>,
}

impl NewsSample {
    pub fn is_cold_start(&self) -> bool {
        self.tree.is_none()
    }

    /// Copy of this sample with its tree removed.
    pub fn stripped(&self) -> NewsSample {
        NewsSample {
            tree: None,
            ..self.clone()
        }
    }
}

/// Removes every propagation tree; content, label and event are untouched.
pub fn strip_propagation(samples: &[NewsSample]) -> Vec<NewsSample> {
    samples.iter().map(NewsSample::stripped).collect()
}

/// Returns `(full, stripped)` copies of the training set, aligned by index.
pub fn make_training_copies(train: &[NewsSample]) -> (Vec<NewsSample>, Vec<NewsSample>) {
    (train.to_vec(), strip_propagation(train))
}
