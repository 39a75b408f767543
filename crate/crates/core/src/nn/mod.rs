//! Named parameters and the layers that read them.
//!
//! Parameters live in a [`ParamStore`] under canonical dotted names
//! (`encoder.layer2.0.conv1.weight`). A forward pass borrows the store
//! through a [`Binding`], which registers each tensor on the tape the first
//! time it is requested and returns the same [`Var`] on every later request,
//! so two calls that read the same name share one tape node.

mod layers;

pub use layers::{BatchNorm2d, Conv2d, ConvBnRelu, DsConv, Linear};

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Initial value distribution of a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    /// `U(-bound, bound)`.
    Uniform { bound: f64 },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Non-learnable state such as batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fill: f64,
}

/// Declarations collected from a layer tree.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    pub params: Vec<ParamSpec>,
    pub buffers: Vec<BufferSpec>,
}

impl Registry {
    pub fn param(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.params.push(ParamSpec { name, shape, init });
    }

    pub fn buffer(&mut self, name: String, shape: Vec<usize>, fill: f64) {
        self.buffers.push(BufferSpec { name, shape, fill });
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamSpec::numel).sum()
    }
}

/// Anything that declares parameters.
pub trait Module {
    fn register(&self, reg: &mut Registry);
}

/// Parameter and buffer tensors keyed by canonical name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    /// Draws every declared parameter, in declaration order, from one seeded stream.
    pub fn initialize(reg: &Registry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for spec in &reg.params {
            let t = match spec.init {
                Init::KaimingNormal { fan_in } => {
                    Tensor::randn(spec.shape.clone(), (2.0 / fan_in as f64).sqrt(), &mut rng)
                }
                Init::Uniform { bound } => {
                    Tensor::uniform(spec.shape.clone(), -bound, bound, &mut rng)
                }
                Init::Zeros => Tensor::zeros(spec.shape.clone()),
                Init::Ones => Tensor::full(spec.shape.clone(), T::one()),
            };
            store.params.insert(spec.name.clone(), t);
        }
        for b in &reg.buffers {
            store
                .buffers
                .insert(b.name.clone(), Tensor::full(b.shape.clone(), T::lit(b.fill)));
        }
        store
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.buffers.iter()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Exponential update of running statistics: `r <- (1 - m)·r + m·batch`,
    /// with the unbiased batch variance.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>], momentum: T) -> Result<()> {
        for u in updates {
            let unbias = if u.stats.count > 1 {
                T::lit(u.stats.count as f64 / (u.stats.count - 1) as f64)
            } else {
                T::one()
            };
            let keep = T::one() - momentum;
            let mean = self
                .buffers
                .get_mut(&format!("{}.running_mean", u.prefix))
                .ok_or_else(|| Error::Config(format!("missing buffer {}.running_mean", u.prefix)))?;
            for (r, &b) in mean.data_mut().iter_mut().zip(&u.stats.mean) {
                *r = keep * *r + momentum * b;
            }
            let var = self
                .buffers
                .get_mut(&format!("{}.running_var", u.prefix))
                .ok_or_else(|| Error::Config(format!("missing buffer {}.running_var", u.prefix)))?;
            for (r, &b) in var.data_mut().iter_mut().zip(&u.stats.var) {
                *r = keep * *r + momentum * b * unbias;
            }
        }
        Ok(())
    }

    /// Every declared name is present with the declared shape.
    pub fn validate(&self, reg: &Registry) -> Result<()> {
        for spec in &reg.params {
            match self.params.get(&spec.name) {
                Some(t) if t.shape() == spec.shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::shape(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                None => return Err(Error::Config(format!("missing parameter {}", spec.name))),
            }
        }
        for b in &reg.buffers {
            match self.buffers.get(&b.name) {
                Some(t) if t.shape() == b.shape.as_slice() => {}
                _ => return Err(Error::Config(format!("missing or misshaped buffer {}", b.name))),
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics recorded for update.
    Train,
    /// Running statistics.
    Eval,
}

/// Pending running-statistics update of one batch-norm layer.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub prefix: String,
    pub stats: BatchStats<T>,
}

/// View of a [`ParamStore`] for the duration of one tape.
pub struct Binding<'s, T> {
    store: &'s ParamStore<T>,
    mode: Mode,
    differentiable: bool,
    vars: HashMap<String, Var>,
    updates: Vec<StatUpdate<T>>,
}

impl<'s, T: Scalar> Binding<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode, differentiable: bool) -> Self {
        Self {
            store,
            mode,
            differentiable,
            vars: HashMap::new(),
            updates: Vec::new(),
        }
    }

    /// Training binding: batch statistics, parameters as differentiable leaves.
    pub fn train(store: &'s ParamStore<T>) -> Self {
        Self::new(store, Mode::Train, true)
    }

    /// Inference binding: running statistics, parameters as constants.
    pub fn eval(store: &'s ParamStore<T>) -> Self {
        Self::new(store, Mode::Eval, false)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The tape node for parameter `name`, registering it on first use.
    pub fn param(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .param(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?
            .clone();
        let v = if self.differentiable {
            tape.leaf(value)
        } else {
            tape.constant(value)
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Binds `name` to an existing node instead of the stored tensor.
    pub fn preset(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.store
            .buffer(name)
            .ok_or_else(|| Error::Config(format!("missing buffer {name}")))
    }

    pub fn record_stats(&mut self, prefix: &str, stats: BatchStats<T>) {
        self.updates.push(StatUpdate {
            prefix: prefix.to_string(),
            stats,
        });
    }

    /// All parameter nodes registered so far.
    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn var_of(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn take_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.updates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binding_returns_one_node_per_name() {
        let mut store = ParamStore::<f32>::new();
        store.insert_param("a", Tensor::zeros([2]));
        let mut tape = Tape::new();
        let mut bind = Binding::train(&store);
        let v1 = bind.param(&mut tape, "a").unwrap();
        let v2 = bind.param(&mut tape, "a").unwrap();
        assert_eq!(v1, v2);
        assert_eq!(tape.len(), 1);
        assert!(bind.param(&mut tape, "missing").is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let mut reg = Registry::default();
        reg.param("w".into(), vec![4, 3], Init::KaimingNormal { fan_in: 3 });
        reg.param("b".into(), vec![4], Init::Zeros);
        let a = ParamStore::<f64>::initialize(&reg, 1);
        let b = ParamStore::<f64>::initialize(&reg, 1);
        let c = ParamStore::<f64>::initialize(&reg, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.num_params(), 16);
        a.validate(&reg).unwrap();
    }
}
