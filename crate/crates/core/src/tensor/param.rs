use std::collections::HashMap;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{invalid, Result};

/// Index of a parameter within its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor with its gradient and momentum buffers.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub momentum: Vec<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let n = value.len();
        Self {
            name: name.into(),
            value,
            grad: vec![T::zero(); n],
            momentum: vec![T::zero(); n],
        }
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return invalid(format!("duplicate parameter name {name}"));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter::new(name, value));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Registers every parameter as a gradient leaf on `g`, in store order.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.params.iter().map(|p| g.param(p.value.clone())).collect())
    }

    /// Registers every parameter as a constant on `g` (inference only).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.params.iter().map(|p| g.constant(p.value.clone())).collect())
    }

    /// Adds the leaf gradients from `g` into each parameter's buffer.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.0) {
            if let Some(gr) = g.grad(v) {
                for (acc, &d) in p.grad.iter_mut().zip(gr) {
                    *acc = *acc + d;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }
}

/// Graph handles for a [`ParamStore`], index-aligned with it.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}
