//! Named parameter collections.

use indexmap::IndexMap;

use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// One trainable array and the gradient most recently collected for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    pub value: NdArray<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Element> Param<T> {
    pub fn new(value: NdArray<T>) -> Self {
        Param { value, grad: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Base,
    Head,
}

/// Ordered name -> parameter map with an optional `head` group.
///
/// This is a value type: `clone` deep-copies every buffer, so copies can be
/// handed to other threads or mutated without affecting the original.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T = f32> {
    base: IndexMap<String, Param<T>>,
    head: Option<IndexMap<String, Param<T>>>,
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            base: IndexMap::new(),
            head: None,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NdArray<T>) {
        self.base.insert(name.into(), Param::new(value));
    }

    /// Adds a parameter to the head group, creating the group if needed.
    pub fn insert_head(&mut self, name: impl Into<String>, value: NdArray<T>) {
        self.head
            .get_or_insert_with(IndexMap::new)
            .insert(name.into(), Param::new(value));
    }

    pub fn is_augmented(&self) -> bool {
        self.head.is_some()
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.head.as_ref().map_or(0, IndexMap::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>, Group)> {
        let base = self.base.iter().map(|(n, p)| (n.as_str(), p, Group::Base));
        let head = self
            .head
            .iter()
            .flat_map(|h| h.iter().map(|(n, p)| (n.as_str(), p, Group::Head)));
        base.chain(head)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        let base = self.base.iter_mut().map(|(n, p)| (n.as_str(), p));
        let head = self
            .head
            .iter_mut()
            .flat_map(|h| h.iter_mut().map(|(n, p)| (n.as_str(), p)));
        base.chain(head)
    }

    pub fn names(&self) -> Vec<&str> {
        self.iter().map(|(n, _, _)| n).collect()
    }

    pub fn get(&self, name: &str) -> Option<&NdArray<T>> {
        self.base
            .get(name)
            .or_else(|| self.head.as_ref().and_then(|h| h.get(name)))
            .map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        if let Some(p) = self.base.get_mut(name) {
            return Some(p);
        }
        self.head.as_mut().and_then(|h| h.get_mut(name))
    }

    /// The base parameters alone. Fails if there is no head to remove.
    pub fn detach_head(&self) -> Result<ParamSet<T>> {
        if self.head.is_none() {
            return Err(TensorError::Contract(
                "detach_head on a parameter set without a head".into(),
            ));
        }
        Ok(self.base_only())
    }

    pub fn base_only(&self) -> ParamSet<T> {
        ParamSet {
            base: self
                .base
                .iter()
                .map(|(n, p)| (n.clone(), Param::new(p.value.clone())))
                .collect(),
            head: None,
        }
    }

    /// Graph leaves for every parameter.
    pub fn bind(&self, requires_grad: bool) -> BoundParams<T> {
        BoundParams {
            tensors: self
                .iter()
                .map(|(n, p, _)| (n.to_string(), Tensor::leaf(p.value.clone(), requires_grad)))
                .collect(),
        }
    }

    /// Copies the gradients accumulated on `bound` into this set. Parameters
    /// the loss never reached are left without a gradient.
    pub fn collect_grads(&mut self, bound: &BoundParams<T>) {
        for (name, param) in self.iter_mut() {
            param.grad = bound.tensors.get(name).and_then(|t| t.grad_ref().clone());
        }
    }

    pub fn clear_grads(&mut self) {
        for (_, p) in self.iter_mut() {
            p.grad = None;
        }
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        let conv = |m: &IndexMap<String, Param<T>>| {
            m.iter()
                .map(|(n, p)| (n.clone(), Param::new(p.value.cast())))
                .collect::<IndexMap<_, _>>()
        };
        ParamSet {
            base: conv(&self.base),
            head: self.head.as_ref().map(conv),
        }
    }

    /// Same names, shapes and bit patterns, ignoring gradients.
    pub fn values_bitwise_eq(&self, other: &ParamSet<T>) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|((na, pa, ga), (nb, pb, gb))| {
                na == nb && ga == gb && pa.value.bitwise_eq(&pb.value)
            })
    }

    pub fn num_scalars(&self) -> usize {
        self.iter().map(|(_, p, _)| p.value.len()).sum()
    }
}

/// Parameters materialized as graph leaves for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct BoundParams<T: Element = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Element> BoundParams<T> {
    /// Binds caller-built tensors under the given names, e.g. leaves that a
    /// gradient checker perturbs.
    pub fn from_tensors(named: impl IntoIterator<Item = (String, Tensor<T>)>) -> Self {
        BoundParams {
            tensors: named.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| TensorError::Contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }
}
