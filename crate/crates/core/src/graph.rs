//! Evaluation contexts for the differentiable operations.
//!
//! Model code is written once against [`Graph`]. Running it on [`Eager`] computes
//! values only; running it on a [`Tape`] also records the computation so that
//! [`Tape::backward`] can pull gradients back to every parameter leaf.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ops::Op;
use crate::tensor::ComplexTensor;

pub trait Graph {
    type Var: Clone;

    fn apply(&mut self, op: Op, inputs: &[&Self::Var]) -> Result<Self::Var>;

    /// A value that gradients do not flow into.
    fn constant(&mut self, value: ComplexTensor) -> Self::Var;

    /// A trainable leaf.
    fn param(&mut self, value: &ComplexTensor) -> Self::Var;

    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a ComplexTensor;

    fn unary(&mut self, op: Op, a: &Self::Var) -> Result<Self::Var> {
        self.apply(op, &[a])
    }

    fn binary(&mut self, op: Op, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(op, &[a, b])
    }

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.binary(Op::MatMul, a, b)
    }

    fn hadamard(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.binary(Op::Hadamard, a, b)
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.binary(Op::Add, a, b)
    }

    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.binary(Op::Sub, a, b)
    }

    fn scale(&mut self, a: &Self::Var, c: Complex64) -> Result<Self::Var> {
        self.unary(Op::Scale(c), a)
    }

    fn add_bias(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.binary(Op::AddBias, a, b)
    }
}

/// Value-only evaluation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Var = ComplexTensor;

    fn apply(&mut self, op: Op, inputs: &[&ComplexTensor]) -> Result<ComplexTensor> {
        op.forward(inputs)
    }

    fn constant(&mut self, value: ComplexTensor) -> ComplexTensor {
        value
    }

    fn param(&mut self, value: &ComplexTensor) -> ComplexTensor {
        value.clone()
    }

    fn value<'a>(&'a self, var: &'a ComplexTensor) -> &'a ComplexTensor {
        var
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Option<Op>,
    inputs: Vec<usize>,
    value: ComplexTensor,
    requires_grad: bool,
}

/// Recorded computation, in topological order by construction.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, one slot per tape node; only trainable leaves are kept.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<ComplexTensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&ComplexTensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> ComplexTensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| ComplexTensor::zeros(shape))
    }

    pub fn take(&mut self, id: NodeId) -> Option<ComplexTensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    #[cfg(test)]
    pub(crate) fn rewire(&mut self, node: NodeId, slot: usize, input: usize) {
        self.nodes[node.0].inputs[slot] = input;
    }

    /// Reverse pass from `loss`, which must be a real scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let root = self.nodes.get(loss.0).ok_or(Error::InvalidShape {
            shape: Vec::new(),
            reason: "loss id not on tape",
        })?;
        if root.value.len() != 1 || root.value.rank() > 1 || root.value.data()[0].im != 0.0 {
            return Err(Error::NotRealScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Some(&bad) = node.inputs.iter().find(|&&j| j >= i) {
                return Err(Error::Cycle {
                    node: i,
                    input: bad,
                });
            }
        }

        let mut needs = vec![false; loss.0 + 1];
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            needs[i] = node.requires_grad || node.inputs.iter().any(|&j| needs[j]);
        }

        let mut grads: Vec<Option<ComplexTensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ComplexTensor::ones(root.value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&ComplexTensor> =
                node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let input_grads = op.vjp(&inputs, &node.value, &g)?;
            for (&j, gj) in node.inputs.iter().zip(input_grads) {
                if !needs[j] {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&gj),
                    slot => *slot = Some(gj),
                }
            }
        }
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !(node.op.is_none() && node.requires_grad) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

impl Graph for Tape {
    type Var = NodeId;

    fn apply(&mut self, op: Op, inputs: &[&NodeId]) -> Result<NodeId> {
        let values: Vec<&ComplexTensor> = inputs
            .iter()
            .map(|id| {
                self.nodes.get(id.0).map(|n| &n.value).ok_or(Error::Cycle {
                    node: self.nodes.len(),
                    input: id.0,
                })
            })
            .collect::<Result<_>>()?;
        let value = op.forward(&values)?;
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        let node = Node {
            op: Some(op),
            inputs: inputs.iter().map(|id| id.0).collect(),
            value,
            requires_grad,
        };
        Ok(self.push(node))
    }

    fn constant(&mut self, value: ComplexTensor) -> NodeId {
        self.push(Node {
            op: None,
            inputs: Vec::new(),
            value,
            requires_grad: false,
        })
    }

    fn param(&mut self, value: &ComplexTensor) -> NodeId {
        self.push(Node {
            op: None,
            inputs: Vec::new(),
            value: value.clone(),
            requires_grad: true,
        })
    }

    fn value<'a>(&'a self, var: &'a NodeId) -> &'a ComplexTensor {
        &self.nodes[var.0].value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn sum_of_real_vector_has_unit_gradient() {
        let mut t = Tape::new();
        let x = t.param(&ComplexTensor::from_real(&[4], &[1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = t.unary(Op::Sum, &x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &ComplexTensor::ones(&[4]));
    }

    #[test]
    fn squared_norm_gradient_matches_real_and_imag_partials() {
        let mut t = Tape::new();
        let x = t.param(&ComplexTensor::new(&[1], vec![c(1.0, 2.0)]).unwrap());
        let s = t.unary(Op::SquaredNorm, &x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data()[0], c(2.0, 4.0));
    }

    #[test]
    fn loss_must_be_real_scalar() {
        let mut t = Tape::new();
        let x = t.param(&ComplexTensor::ones(&[3]));
        assert!(matches!(t.backward(x), Err(Error::NotRealScalar { .. })));
        let y = t.param(&ComplexTensor::new(&[1], vec![c(0.0, 1.0)]).unwrap());
        let s = t.unary(Op::Sum, &y).unwrap();
        assert!(matches!(t.backward(s), Err(Error::NotRealScalar { .. })));
    }

    #[test]
    fn out_of_order_inputs_are_reported_as_cycles() {
        let mut t = Tape::new();
        let x = t.param(&ComplexTensor::ones(&[2]));
        let y = t.unary(Op::Scale(c(2.0, 0.0)), &x).unwrap();
        let s = t.unary(Op::SquaredNorm, &y).unwrap();
        t.rewire(y, 0, s.0);
        assert_eq!(
            t.backward(s).unwrap_err(),
            Error::Cycle { node: 1, input: 2 }
        );
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut t = Tape::new();
        let x = t.param(&ComplexTensor::from_real(&[2], &[3.0, -1.0]).unwrap());
        let y = t.hadamard(&x, &x).unwrap();
        let r = t.unary(Op::RealPart, &y).unwrap();
        let s = t.unary(Op::Sum, &r).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().real_parts(), vec![6.0, -2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(ComplexTensor::ones(&[2]));
        let x = t.param(&ComplexTensor::ones(&[2]));
        let y = t.add(&a, &x).unwrap();
        let s = t.unary(Op::SquaredNorm, &y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(a).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn eager_and_tape_agree() {
        let a = ComplexTensor::new(
            &[2, 2],
            vec![c(1.0, 1.0), c(0.0, 2.0), c(-1.0, 0.0), c(3.0, 0.5)],
        )
        .unwrap();
        let mut e = Eager;
        let ea = e.param(&a);
        let ev = e.matmul(&ea, &ea).unwrap();
        let mut t = Tape::new();
        let ta = t.param(&a);
        let tv = t.matmul(&ta, &ta).unwrap();
        assert_eq!(&ev, t.value(&tv));
    }
}
