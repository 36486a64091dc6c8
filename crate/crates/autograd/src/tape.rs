use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Computes the gradient contribution for every input of a node, in input
/// order, from the gradient flowing into the node's output.
pub(crate) type BackwardFn<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>>>;

struct Node<F: Element> {
    value: Rc<Tensor<F>>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<F>>,
}

/// Wengert list of executed operations.
///
/// Operations are appended in execution order, so the node index is already
/// a topological order and backward is a single reverse sweep. Nodes whose
/// inputs need no gradient keep their value but drop the backward closure.
pub struct Tape<F: Element = f32> {
    nodes: RefCell<Vec<Node<F>>>,
    generation: Cell<u64>,
}

impl<F: Element> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> fmt::Debug for Tape<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("generation", &self.generation.get())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F: Element = f32> {
    pub(crate) tape: &'t Tape<F>,
    pub(crate) id: usize,
    generation: u64,
}

impl<F: Element> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            generation: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records a leaf. It receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: Tensor<F>) -> Var<'_, F> {
        let rg = tensor.requires_grad();
        self.push_node(Rc::new(tensor), rg, Vec::new(), None)
    }

    /// Records a shared leaf without copying its payload.
    pub fn leaf_shared(&self, tensor: Rc<Tensor<F>>, requires_grad: bool) -> Var<'_, F> {
        self.push_node(tensor, requires_grad, Vec::new(), None)
    }

    /// Records a constant (never differentiated).
    pub fn constant(&self, tensor: Tensor<F>) -> Var<'_, F> {
        self.push_node(Rc::new(tensor), false, Vec::new(), None)
    }

    pub fn scalar(&self, value: F) -> Var<'_, F> {
        self.constant(Tensor::scalar(value))
    }

    fn push_node(
        &self,
        value: Rc<Tensor<F>>,
        requires_grad: bool,
        inputs: Vec<usize>,
        backward: Option<BackwardFn<F>>,
    ) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            inputs,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }

    /// Appends the result of a differentiable operation.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor<F>,
        inputs: &[Var<'t, F>],
        backward: impl Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>> + 'static,
    ) -> Var<'t, F> {
        for v in inputs {
            v.check();
            debug_assert!(std::ptr::eq(v.tape, self), "variables from different tapes");
        }
        let rg = inputs.iter().any(|v| v.requires_grad());
        if rg {
            self.push_node(
                Rc::new(value),
                true,
                inputs.iter().map(|v| v.id).collect(),
                Some(Box::new(backward)),
            )
        } else {
            self.push_node(Rc::new(value), false, Vec::new(), None)
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<F>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Returns the gradient of every leaf that requires one, then clears the
    /// tape. Variables from the cleared generation become invalid.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        loss.try_check()?;
        let shape = loss.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let generation = self.generation.get();
        let mut nodes = self.nodes.borrow_mut();
        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor<F>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::full(&shape, F::one()));
        }
        for id in (0..n).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let contribs = backward(&g);
            debug_assert_eq!(contribs.len(), node.inputs.len());
            for (&input, contrib) in node.inputs.iter().zip(contribs) {
                let Some(contrib) = contrib else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(contrib.shape(), nodes[input].value.shape());
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        // Only leaves keep their gradient; interior slots were consumed above.
        for (id, node) in nodes.iter().enumerate() {
            if node.backward.is_some() || !node.requires_grad {
                grads[id] = None;
            }
        }
        nodes.clear();
        self.generation.set(generation + 1);
        Ok(Gradients { grads, generation })
    }

    /// Drops every recorded node without computing gradients.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.generation.set(self.generation.get() + 1);
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F: Element> {
    grads: Vec<Option<Tensor<F>>>,
    generation: u64,
}

impl<F: Element> Gradients<F> {
    pub fn get(&self, var: &Var<'_, F>) -> Option<&Tensor<F>> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of `shape` when nothing flowed to it.
    pub fn get_or_zeros(&self, var: &Var<'_, F>, shape: &[usize]) -> Tensor<F> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<'t, F: Element> Var<'t, F> {
    fn try_check(&self) -> Result<()> {
        if self.generation != self.tape.generation.get() {
            return Err(TensorError::StaleVariable);
        }
        Ok(())
    }

    fn check(&self) {
        assert!(
            self.generation == self.tape.generation.get(),
            "use of a variable from a cleared tape"
        );
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<F>> {
        self.check();
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.check();
        self.tape.requires_grad_of(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, F> {
        let value = self.value();
        self.tape.push_node(value, false, Vec::new(), None)
    }

    pub fn item(&self) -> F {
        self.value().item()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]).with_grad());
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn tape_is_cleared_after_backward() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[3]).with_grad());
        let loss = x.sum();
        let grads = tape.backward(loss).unwrap();
        assert!(tape.is_empty());
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(matches!(tape.backward(loss), Err(TensorError::StaleVariable)));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]).with_grad());
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let loss = x.mul(c).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[3.0, 3.0]);
        assert!(grads.get(&c).is_none());
    }
}
