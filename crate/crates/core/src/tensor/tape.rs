use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// `needs[k]` is false when input `k` does not require a gradient; the
/// implementation may return `None` for it.
pub trait Backward<F: Real>: Send {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor<F>], output: &Tensor<F>, grad: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>>;
}

struct Node<F: Real> {
    value: Tensor<F>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward<F>>>,
    requires_grad: bool,
}

/// Single-threaded record of executed operations.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    grad_enabled: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward closures (inference only).
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    /// Input that receives a gradient.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        let requires = self.grad_enabled;
        self.push_node(value, Vec::new(), None, requires)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records the result of an operation together with its backward rule.
    pub fn record(&mut self, value: Tensor<F>, inputs: &[Var], op: impl Backward<F> + 'static) -> Var {
        let requires = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn Backward<F>>> = if requires { Some(Box::new(op)) } else { None };
        self.push_node(value, inputs.to_vec(), op, requires)
    }

    fn push_node(&mut self, value: Tensor<F>, inputs: Vec<Var>, op: Option<Box<dyn Backward<F>>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Gradients are retained for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::shape("backward", root.value.shape(), &[]));
        }
        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.value.shape(), F::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor<F>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for ((var, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[var.0].value.shape(), "{}", op.name());
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a loss with respect to tape leaves.
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
