use std::collections::HashMap;
use std::ops::Index;
use std::rc::Rc;

use rand::Rng;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::init::xavier_uniform;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry<F: Element> {
    name: String,
    value: Rc<Tensor<F>>,
    trainable: bool,
}

/// Ordered, named collection of model parameters.
///
/// Insertion order is stable and defines checkpoint layout and optimizer
/// state alignment.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Element = f32> {
    entries: Vec<Entry<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::InvalidArgument {
                op: "ParamStore::add",
                reason: format!("duplicate parameter name {name:?}"),
            });
        }
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            value: Rc::new(value),
            trainable: true,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Weight with uniform Glorot initialisation.
    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        self.add(name, xavier_uniform(shape, fan_in, fan_out, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    /// Mutable access to every value, in store order.
    pub fn values_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.entries.iter_mut().map(|e| Rc::make_mut(&mut e.value)).collect()
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let cur = self.get(id);
        if cur.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "ParamStore::set",
                lhs: cur.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.entries[id.0].value = Rc::new(value);
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.trainable = trainable;
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Places every parameter on `tape` as a leaf; trainable ones require grad.
    pub fn bind<'t>(&self, tape: &'t Tape<F>) -> Bound<'t, F> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| tape.leaf_shared(Rc::clone(&e.value), e.trainable))
                .collect(),
        }
    }

    /// Same parameters in another precision.
    pub fn cast<G: Element>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: Rc::new(e.value.cast()),
                    trainable: e.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Parameters of a [`ParamStore`] bound to one tape.
pub struct Bound<'t, F: Element> {
    vars: Vec<Var<'t, F>>,
}

impl<'t, F: Element> Bound<'t, F> {
    /// Binds arbitrary variables in store order, e.g. the perturbed inputs
    /// of a gradient check.
    pub fn from_vars(vars: Vec<Var<'t, F>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t, F> {
        self.vars[id.0]
    }

    /// Gradient per parameter, in store order (zeros where nothing flowed).
    pub fn collect_grads(&self, store: &ParamStore<F>, grads: &Gradients<F>) -> Vec<Option<Tensor<F>>> {
        store
            .ids()
            .map(|id| {
                store
                    .is_trainable(id)
                    .then(|| grads.get_or_zeros(&self.vars[id.0], store.get(id).shape()))
            })
            .collect()
    }
}

impl<'t, F: Element> Index<ParamId> for Bound<'t, F> {
    type Output = Var<'t, F>;

    fn index(&self, id: ParamId) -> &Self::Output {
        &self.vars[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add_zeros("a", &[2]).unwrap();
        assert!(s.add_zeros("a", &[3]).is_err());
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("enc.a", Tensor::ones(&[2])).unwrap();
        let b = s.add("head.b", Tensor::ones(&[2])).unwrap();
        s.set_trainable_prefix("enc.", false);
        let tape = Tape::new();
        let bound = s.bind(&tape);
        let loss = bound[a].mul(bound[b]).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        let g = bound.collect_grads(&s, &grads);
        assert!(g[0].is_none());
        assert_eq!(g[1].as_ref().unwrap().data(), &[1.0, 1.0]);
    }
}
