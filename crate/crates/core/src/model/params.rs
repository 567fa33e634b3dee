use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Index of one underlying parameter tensor. Aliased names share an id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Initialization rule for a freshly declared parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(−√(6/fan_in), √(6/fan_in))`.
    HeUniform {
        fan_in: usize,
    },
    /// `U(−√(6/(fan_in+fan_out)), +…)`.
    XavierUniform {
        fan_in: usize,
        fan_out: usize,
    },
    /// `gain · U(−√(3/fan_in), √(3/fan_in))`.
    ScaledUniform {
        fan_in: usize,
        gain: f64,
    },
    Uniform {
        bound: f64,
    },
    Zeros,
    Ones,
}

impl Init {
    fn sample<T: Scalar>(self, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
        let bound = match self {
            Init::Zeros => return Tensor::zeros(shape),
            Init::Ones => return Tensor::ones(shape),
            Init::HeUniform { fan_in } => (6.0 / fan_in.max(1) as f64).sqrt(),
            Init::XavierUniform { fan_in, fan_out } => {
                (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
            }
            Init::ScaledUniform { fan_in, gain } => gain * (3.0 / fan_in.max(1) as f64).sqrt(),
            Init::Uniform { bound } => bound,
        };
        Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
    }
}

/// Names, shapes and aliasing of a parameter set, without storage.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    entries: Vec<(String, ParamId)>,
    index: HashMap<String, usize>,
    shapes: Vec<Vec<usize>>,
    owners: Vec<String>,
}

impl ParamLayout {
    fn declare(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.check_fresh(name)?;
        let id = ParamId(self.shapes.len());
        self.shapes.push(shape.to_vec());
        self.owners.push(name.to_string());
        self.push_entry(name, id);
        Ok(id)
    }

    fn alias(&mut self, name: &str, id: ParamId) -> Result<()> {
        self.check_fresh(name)?;
        if id.0 >= self.shapes.len() {
            return Err(Error::Contract(format!(
                "alias {name} targets unknown id {}",
                id.0
            )));
        }
        self.push_entry(name, id);
        Ok(())
    }

    fn check_fresh(&self, name: &str) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        Ok(())
    }

    fn push_entry(&mut self, name: &str, id: ParamId) {
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), id));
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| self.entries[i].1)
    }

    /// Every name in declaration order, aliases included.
    pub fn entries(&self) -> impl Iterator<Item = (&str, ParamId)> {
        self.entries.iter().map(|(n, id)| (n.as_str(), *id))
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn num_unique(&self) -> usize {
        self.shapes.len()
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    /// Name under which the tensor was first declared.
    pub fn owner(&self, id: ParamId) -> &str {
        &self.owners[id.0]
    }

    pub fn is_alias(&self, name: &str) -> bool {
        self.id(name).is_some_and(|id| self.owners[id.0] != name)
    }

    /// Total element count over unique tensors.
    pub fn element_count(&self) -> usize {
        self.shapes
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Receiver for parameter declarations while a network is assembled.
pub(crate) trait ParamSink {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId>;
    fn alias(&mut self, name: &str, id: ParamId) -> Result<()>;
}

impl ParamSink for ParamLayout {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<ParamId> {
        self.declare(name, shape)
    }

    fn alias(&mut self, name: &str, id: ParamId) -> Result<()> {
        ParamLayout::alias(self, name, id)
    }
}

/// Ordered name → tensor map. Aliased names resolve to one shared tensor.
#[derive(Debug, Clone)]
pub struct ParamTable<T: Scalar = f32> {
    layout: ParamLayout,
    storage: Vec<Arc<Tensor<T>>>,
}

impl<T: Scalar> Default for ParamTable<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamTable<T> {
    pub fn new() -> Self {
        Self {
            layout: ParamLayout::default(),
            storage: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        let id = self.layout.declare(name, value.shape())?;
        self.storage.push(Arc::new(value));
        Ok(id)
    }

    pub fn alias(&mut self, name: &str, id: ParamId) -> Result<()> {
        self.layout.alias(name, id)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.layout.id(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.tensor(id))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| self.tensor_mut(id))
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.storage[id.0]
    }

    /// In place when no tape still holds the tensor; copy-on-write otherwise.
    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.storage[id.0])
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.layout.shape(id) {
            return Err(Error::dim(format!(
                "{}: expected {:?}, got {:?}",
                self.layout.owner(id),
                self.layout.shape(id),
                value.shape()
            )));
        }
        self.storage[id.0] = Arc::new(value);
        Ok(())
    }

    /// Every name in declaration order, aliases included.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.layout
            .entries()
            .map(|(n, id)| (n, &*self.storage[id.0]))
    }

    /// Each underlying tensor once, under its owning name.
    pub fn unique(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.storage
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.layout.owner(ParamId(i)), &**t))
    }

    pub fn num_unique(&self) -> usize {
        self.storage.len()
    }

    pub fn element_count(&self) -> usize {
        self.layout.element_count()
    }

    /// Records every tensor on `tape`, as gradient leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .storage
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf_shared(Arc::clone(t))
                } else {
                    tape.constant_shared(Arc::clone(t))
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn cast<U: Scalar>(&self) -> ParamTable<U> {
        ParamTable {
            layout: self.layout.clone(),
            storage: self.storage.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }
}

/// [`ParamSink`] that allocates and initializes tensors from a seeded stream.
pub(crate) struct Materialize<'a, T: Scalar> {
    pub table: &'a mut ParamTable<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> ParamSink for Materialize<'_, T> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let value = init.sample(shape, self.rng);
        self.table.insert(name, value)
    }

    fn alias(&mut self, name: &str, id: ParamId) -> Result<()> {
        self.table.alias(name, id)
    }
}

/// Parameters bound to one tape, indexed by [`ParamId`].
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Gradient per unique tensor after `backward`; `None` where unreached.
    pub fn grads(&self) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| v.grad()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_share_storage_and_count_once() {
        let mut t = ParamTable::<f32>::new();
        let a = t.insert("a.w", Tensor::zeros(&[3, 2])).unwrap();
        t.insert("b.w", Tensor::zeros(&[4])).unwrap();
        t.alias("c.w", a).unwrap();
        assert_eq!(t.element_count(), 10);
        assert_eq!(t.entries().count(), 3);
        t.get_mut("c.w").unwrap().data_mut()[0] = 5.0;
        assert_eq!(t.get("a.w").unwrap().data()[0], 5.0);
        assert!(t.layout().is_alias("c.w"));
        assert!(!t.layout().is_alias("a.w"));
        assert!(t.insert("a.w", Tensor::zeros(&[1])).is_err());
        assert!(t.alias("b.w", a).is_err());
    }

    #[test]
    fn order_is_declaration_order() {
        let mut t = ParamTable::<f64>::new();
        for n in ["z", "m", "a"] {
            t.insert(n, Tensor::zeros(&[1])).unwrap();
        }
        let names: Vec<_> = t.entries().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["z", "m", "a"]);
    }

    #[test]
    fn set_checks_shape() {
        let mut t = ParamTable::<f32>::new();
        let a = t.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(t.set(a, Tensor::zeros(&[3])).is_err());
        t.set(a, Tensor::ones(&[2])).unwrap();
        assert_eq!(t.tensor(a).sum(), 2.0);
    }
}
