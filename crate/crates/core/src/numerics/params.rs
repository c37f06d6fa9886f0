use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Result, SanError};

/// The three independently updated parameter groups of a detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Classifier,
    Discriminator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [
        ParamGroup::Encoder,
        ParamGroup::Classifier,
        ParamGroup::Discriminator,
    ];
}

/// Position of a parameter inside its [`ParamSets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Ordered collection of named parameter tensors, split into groups.
///
/// Groups can be frozen; [`sgd_step`](super::sgd_step) skips frozen groups
/// and requires a gradient for every other parameter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSets {
    entries: Vec<ParamEntry>,
    #[serde(default)]
    frozen: Vec<ParamGroup>,
}

impl ParamSets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, group: ParamGroup, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    /// Adds a Glorot-uniform initialized `fan_in x fan_out` weight matrix.
    pub fn add_glorot<R: Rng>(
        &mut self,
        group: ParamGroup,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let t = Tensor::new(vec![fan_in, fan_out], values).expect("positive dims");
        self.add(group, name, t)
    }

    pub fn add_zeros(&mut self, group: ParamGroup, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(group, name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.find(name)
            .ok_or_else(|| SanError::Consistency(format!("missing parameter {name}")))
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(SanError::dim("ParamSets::set", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: ParamGroup) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.group == group)
            .map(|(i, _)| ParamId(i))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn num_scalars_in(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn freeze(&mut self, group: ParamGroup) {
        if !self.frozen.contains(&group) {
            self.frozen.push(group);
            self.frozen.sort();
        }
    }

    pub fn unfreeze(&mut self, group: ParamGroup) {
        self.frozen.retain(|g| *g != group);
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        !self.frozen.contains(&self.entries[id.0].group)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

/// Accumulated gradients, one optional tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn for_params(params: &ParamSets) -> Self {
        Gradients {
            slots: vec![None; params.len()],
        }
    }

    pub(crate) fn with_len(len: usize) -> Self {
        Gradients {
            slots: vec![None; len],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    /// Adds `grad` into the slot for `id`.
    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        if id.0 >= self.slots.len() {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(existing) => existing.add_assign(grad),
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Elementwise sum of two gradient stores.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.slots.iter_mut().flatten() {
            *g = g.scaled(c);
        }
    }

    pub fn touched(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_some())
            .map(|(i, _)| ParamId(i))
    }

    /// Overwrites one gradient entry. Used to inject faults in checks.
    pub fn perturb(&mut self, id: ParamId, index: usize, delta: f64) {
        if let Some(Some(g)) = self.slots.get_mut(id.0) {
            g.values_mut()[index] += delta;
        }
    }
}
