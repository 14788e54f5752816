use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Optimizer group; the two groups get separate learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Network,
    Bandwidth,
}

/// How an unconstrained stored value materializes on the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    /// `softplus(raw)`, strictly positive.
    Positive,
    /// One scalar `v` giving `(1/(1+e^v), 1/(1+e^-v))`.
    LogisticPair,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
    pub constraint: Constraint,
    pub trainable: bool,
}

/// Named trainable tensors, shared read-only by every graph of a batch.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup, constraint: Constraint) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry { name, value, group, constraint, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    /// Add a positive parameter whose constrained value starts at `init`.
    pub fn add_positive(&mut self, name: impl Into<String>, init: &[f64], group: ParamGroup) -> ParamId {
        let raw = init.iter().map(|&v| inverse_softplus(v)).collect();
        self.add(name, Tensor::vector(raw), group, Constraint::Positive)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.entries[id.0].value.shape());
        self.entries[id.0].value = value;
    }

    /// Constrained value, evaluated without a graph.
    pub fn constrained(&self, id: ParamId) -> Vec<f64> {
        let e = &self.entries[id.0];
        match e.constraint {
            Constraint::None => e.value.data().to_vec(),
            Constraint::Positive => e.value.data().iter().map(|&v| softplus(v)).collect(),
            Constraint::LogisticPair => {
                let v = e.value.item();
                vec![sigmoid(-v), sigmoid(v)]
            }
        }
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Freeze or unfreeze a whole group.
    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for e in &mut self.entries {
            if e.group == group {
                e.trainable = trainable;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.all_finite())
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "softplus target must be positive");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    /// Bind a parameter and apply its constraint. Logistic pairs come back
    /// as a 2-vector `(w1, w2)`.
    pub fn constrained(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let raw = self.param(store, id);
        match store.entry(id).constraint {
            Constraint::None => raw,
            Constraint::Positive => raw.softplus(),
            Constraint::LogisticPair => {
                let w1 = raw.neg().sigmoid();
                let w2 = raw.sigmoid();
                Var::concat(&[w1.reshape(&[1]), w2.reshape(&[1])], 0).expect("scalar logistic parameter")
            }
        }
    }
}

/// Parameter-indexed gradient buffers.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients { grads: store.entries.iter().map(|e| Tensor::zeros(e.value.shape())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub(crate) fn add_to(&mut self, id: ParamId, t: &Tensor) {
        self.grads[id.0].add_assign(t);
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_in_place(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.all_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}
