//! Named trainable parameters and their binding onto a tape.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Text,
    Audio,
    Visual,
    Fusion,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Text => "text",
            ParamGroup::Audio => "audio",
            ParamGroup::Visual => "visual",
            ParamGroup::Fusion => "fusion",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "text" => Some(ParamGroup::Text),
            "audio" => Some(ParamGroup::Audio),
            "visual" => Some(ParamGroup::Visual),
            "fusion" => Some(ParamGroup::Fusion),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform initialisation in `[-bound, bound]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("valid shape");
        self.add(name, group, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every gradient buffer to zeros.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Some(vec![0.0; p.value.len()]);
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Copies values from `other`, which must have the identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Schema("parameter count differs".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Schema(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// Lazily binds parameters onto one forward tape and collects their
/// gradients afterwards.
#[derive(Debug)]
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self::with_tape(store, Tape::new(), trainable)
    }

    pub fn with_tape(store: &'a ParamStore, tape: Tape, trainable: bool) -> Self {
        Self {
            tape,
            store,
            bound: vec![None; store.len()],
            trainable,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).value.clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        self.bound[id.0].is_some()
    }

    /// Gradient per parameter; parameters never bound or never reached get
    /// zeros.
    pub fn gradients(&self) -> Vec<Vec<f64>> {
        self.store
            .iter()
            .map(|(id, p)| {
                self.bound[id.0]
                    .and_then(|v| self.tape.grad(v))
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.value.len()])
            })
            .collect()
    }
}

/// Installs gradients collected from a session into the store.
pub fn install_grads(store: &mut ParamStore, grads: Vec<Vec<f64>>) {
    for (p, g) in store.iter_mut().zip(grads) {
        p.grad = Some(g);
    }
}
