use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Element, Tape, Tensor, Var};
use rand::Rng;
use std::collections::HashMap;

/// Index of a tensor inside a [`ModelParams`] collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable.
    Weight,
    /// Persistent state that is not learned (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Element = f32> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Named, ordered collection of tensors; the checkpoint unit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams<T: Element = f32> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, kind, value });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    /// Number of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ModelParams<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for entry in &mut self.entries {
            let src = other
                .by_name(&entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", entry.name)))?;
            if src.shape() != entry.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    entry.name,
                    src.shape(),
                    entry.value.shape()
                )));
            }
            entry.value = src.clone();
        }
        Ok(())
    }
}

/// Binds a parameter collection to one tape recording.
///
/// Parameters become tape leaves on first use. With `trainable` set, those
/// leaves require gradients; otherwise the network acts as a fixed function
/// through which gradients still flow to its inputs.
pub struct Bound<'a, T: Element = f32> {
    params: ParamsRef<'a, T>,
    vars: Vec<Option<Var>>,
    pub mode: BatchNormMode,
    pub trainable: bool,
}

enum ParamsRef<'a, T: Element> {
    Mut(&'a mut ModelParams<T>),
    Shared(&'a ModelParams<T>),
}

impl<T: Element> ParamsRef<'_, T> {
    fn get(&self) -> &ModelParams<T> {
        match self {
            ParamsRef::Mut(p) => p,
            ParamsRef::Shared(p) => p,
        }
    }
}

impl<'a, T: Element> Bound<'a, T> {
    pub fn new(params: &'a mut ModelParams<T>, mode: BatchNormMode, trainable: bool) -> Self {
        let n = params.len();
        Self {
            params: ParamsRef::Mut(params),
            vars: vec![None; n],
            mode,
            trainable,
        }
    }

    /// Read-only binding of a frozen network. Batch-norm layers are unavailable.
    pub fn frozen(params: &'a ModelParams<T>) -> Self {
        let n = params.len();
        Self {
            params: ParamsRef::Shared(params),
            vars: vec![None; n],
            mode: BatchNormMode::Eval,
            trainable: false,
        }
    }

    pub fn param(&mut self, tape: &mut Tape<T>, id: ParamId) -> Result<Var> {
        if let Some(v) = self.vars[id.0] {
            return Ok(v);
        }
        let entry = &self.params.get().entries[id.0];
        let rg = self.trainable && entry.kind == ParamKind::Weight;
        let v = tape.leaf(entry.value.clone(), rg)?;
        self.vars[id.0] = Some(v);
        Ok(v)
    }

    /// Uses an existing tape variable for `id` instead of a fresh leaf.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = Some(var);
    }

    pub fn params(&self) -> &ModelParams<T> {
        self.params.get()
    }

    /// Running-state buffers for batch normalization.
    pub fn buffers_mut(&mut self, mean: ParamId, var: ParamId) -> Result<(&mut [T], &mut [T])> {
        let ParamsRef::Mut(params) = &mut self.params else {
            return Err(Error::InvalidArgument(
                "batch normalization needs a mutable parameter binding".into(),
            ));
        };
        assert_ne!(mean, var);
        let (lo, hi, swap) = if mean.0 < var.0 {
            (mean.0, var.0, false)
        } else {
            (var.0, mean.0, true)
        };
        let (head, tail) = params.entries.split_at_mut(hi);
        let a = head[lo].value.data_mut();
        let b = tail[0].value.data_mut();
        Ok(if swap { (b, a) } else { (a, b) })
    }

    /// Gradients for every bound learnable parameter, indexed like the collection.
    pub fn grads(&self, tape: &Tape<T>) -> Vec<Option<Tensor<T>>> {
        self.vars
            .iter()
            .map(|v| v.and_then(|v| tape.grad(v).cloned()))
            .collect()
    }
}

/// Creates parameters with seeded initialization under a name prefix.
pub struct ParamBuilder<'a, R: Rng> {
    params: &'a mut ModelParams<f32>,
    rng: &'a mut R,
    prefix: String,
}

/// Initial PReLU slope.
pub const PRELU_INIT: f32 = 0.25;

impl<'a, R: Rng> ParamBuilder<'a, R> {
    pub fn new(params: &'a mut ModelParams<f32>, rng: &'a mut R, prefix: &str) -> Self {
        Self {
            params,
            rng,
            prefix: prefix.to_string(),
        }
    }

    /// Child builder whose names are `<prefix>.<name>`.
    pub fn scope<'b>(&'b mut self, name: &str) -> ParamBuilder<'b, R> {
        ParamBuilder {
            params: self.params,
            rng: self.rng,
            prefix: join(&self.prefix, name),
        }
    }

    fn name(&self, leaf: &str) -> String {
        join(&self.prefix, leaf)
    }

    /// Kaiming-uniform with gain parameter sqrt(5), i.e. bounds of
    /// ±1/sqrt(fan_in). The smaller gain keeps the deep residual sums of the
    /// untrained generator at unit scale.
    pub fn kaiming(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, self.rng);
        self.params.insert(self.name(leaf), ParamKind::Weight, t)
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f32) -> Result<ParamId> {
        self.params
            .insert(self.name(leaf), ParamKind::Weight, Tensor::full(shape, value))
    }

    pub fn buffer(&mut self, leaf: &str, shape: &[usize], value: f32) -> Result<ParamId> {
        self.params
            .insert(self.name(leaf), ParamKind::Buffer, Tensor::full(shape, value))
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
