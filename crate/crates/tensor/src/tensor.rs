//! Graph tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value plus, when it was produced by a
//! differentiable op on inputs that require gradients, a record of that op.
//! Calling [`Tensor::backward`] on a scalar walks those records in reverse
//! topological order and deposits gradients in every reachable tensor that
//! requires one.

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};

/// Maps the gradient of an op's output to gradients of each of its inputs
/// (`None` for inputs that receive nothing).
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Lineage<T: Element> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Element> {
    value: NdArray<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    lineage: Option<Lineage<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Element = f32>(Rc<Node<T>>);

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn leaf(value: NdArray<T>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            lineage: None,
        }))
    }

    pub fn constant(value: NdArray<T>) -> Self {
        Self::leaf(value, false)
    }

    pub fn parameter(value: NdArray<T>) -> Self {
        Self::leaf(value, true)
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        Ok(Self::leaf(NdArray::new(shape, data)?, requires_grad))
    }

    /// Result of a differentiable op. The lineage is only kept when some
    /// input requires a gradient.
    pub fn from_op(
        op: &'static str,
        value: NdArray<T>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let lineage = requires_grad.then(|| Lineage {
            op,
            inputs,
            backward,
        });
        Tensor(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            lineage,
        }))
    }

    pub fn value(&self) -> &NdArray<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.0.value.data()
    }

    pub fn numel(&self) -> usize {
        self.0.value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.lineage.as_ref().map(|l| l.op)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data()[0]
    }

    /// Accumulated gradient; populated on leaves only.
    pub fn grad(&self) -> Option<NdArray<T>> {
        let grad = self.0.grad.borrow();
        grad.as_ref().map(|g| {
            NdArray::new(self.shape().to_vec(), g.clone()).expect("grad matches value shape")
        })
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().take();
    }

    /// Copies the value into a fresh leaf with no history.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::constant(self.value().clone())
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    fn accumulate(&self, g: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => existing.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Nodes reachable through gradient-carrying lineage, inputs before outputs.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(lineage) = &node.0.lineage {
                for input in lineage.inputs.iter().filter(|t| t.requires_grad()) {
                    if !visited.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Back-propagates from this scalar. Gradients accumulate into existing
    /// slots, so repeated calls sum.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(TensorError::Contract(
                "backward on a tensor that does not require grad".into(),
            ));
        }
        let order = self.topological_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::with_capacity(order.len());
        pending.insert(self.key(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(out_grad) = pending.remove(&node.key()) else {
                continue;
            };
            // Gradients are kept on leaves only; interior buffers are freed as soon as consumed.
            let Some(lineage) = &node.0.lineage else {
                node.accumulate(&out_grad);
                continue;
            };
            let input_grads = (lineage.backward)(&out_grad);
            drop(out_grad);
            debug_assert_eq!(input_grads.len(), lineage.inputs.len());
            for (input, grad) in lineage.inputs.iter().zip(input_grads) {
                let Some(grad) = grad else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(grad.len(), input.numel(), "grad shape for {}", lineage.op);
                match pending.get_mut(&input.key()) {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        pending.insert(input.key(), grad);
                    }
                }
            }
        }
        Ok(())
    }
}
