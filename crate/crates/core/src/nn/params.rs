use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let current = &self.tensors[id.0];
        if current.shape() != value.shape() {
            return Err(Error::shape("ParamStore::set", current.shape(), value.shape()));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    /// Replaces all tensors at once, e.g. from a checkpoint.
    pub fn replace_all(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.shape() != self.tensors[i].shape() {
                return Err(Error::config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    v.shape(),
                    self.tensors[i].shape()
                )));
            }
        }
        self.tensors = values;
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Overwrites every parameter with uniform noise in `[-scale, scale)`.
    /// Used by tests to make all branches active.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut self.tensors {
            *t = Tensor::uniform(t.shape(), scale, &mut rng);
        }
    }
}

/// Builds parameters into a store under a dotted name prefix.
pub struct Initializer<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Initializer<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Initializer<'_> {
        Initializer {
            prefix: self.qualify(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn qualify(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn kaiming_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::uniform(shape, bound, self.rng);
        self.store.push(self.qualify(name), t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.push(self.qualify(name), Tensor::full(shape, value))
    }
}

/// Parameters bound to a tape for one forward pass.
pub struct Ctx<'t> {
    pub tape: &'t mut Tape,
    vars: Vec<Var>,
}

impl<'t> Ctx<'t> {
    /// Registers every parameter as a leaf; `trainable` leaves collect
    /// gradients.
    pub fn new(tape: &'t mut Tape, store: &ParamStore, trainable: bool) -> Self {
        let vars = store
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self { tape, vars }
    }

    /// Binds parameters that are already on the tape, in store order. Lets
    /// gradient checks treat parameters as ordinary inputs.
    pub fn from_vars(tape: &'t mut Tape, vars: Vec<Var>) -> Self {
        Self { tape, vars }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient buffers in parameter order (zeros for constants).
    pub fn param_grads(&self) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| match self.tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; self.tape.value(v).numel()],
            })
            .collect()
    }
}
