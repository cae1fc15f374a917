use std::collections::HashMap;

use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// One differentiable operation recorded on a [`Tape`].
///
/// A record owns whatever it needs to push gradients back to its inputs; the
/// values of those inputs are reachable through the [`TapeCtx`] by node id, so
/// most ops store nothing beyond ids and a few scalars. New operations can be
/// defined outside this crate and recorded with [`Tape::record`].
pub trait TapeOp<P: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn inputs(&self) -> Vec<NodeId>;

    /// Accumulate gradients for this record's inputs.
    ///
    /// `out` is the value this record produced in the forward pass and
    /// `grad_out` the gradient arriving at it; both have the same shape.
    fn backward(&self, ctx: &TapeCtx<'_, P>, out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>);
}

/// Leaf record: a named learnable parameter.
struct ParamOp;

impl<P: Real> TapeOp<P> for ParamOp {
    fn name(&self) -> &'static str {
        "param"
    }
    fn inputs(&self) -> Vec<NodeId> {
        Vec::new()
    }
    fn backward(&self, _: &TapeCtx<'_, P>, _: &Tensor<P>, _: &Tensor<P>, _: &mut GradSink<P>) {}
}

/// Leaf record: a constant input, no gradient kept.
struct ConstOp;

impl<P: Real> TapeOp<P> for ConstOp {
    fn name(&self) -> &'static str {
        "const"
    }
    fn inputs(&self) -> Vec<NodeId> {
        Vec::new()
    }
    fn backward(&self, _: &TapeCtx<'_, P>, _: &Tensor<P>, _: &Tensor<P>, _: &mut GradSink<P>) {}
}

struct Node<P: Real> {
    op: Box<dyn TapeOp<P>>,
    value: Tensor<P>,
}

/// Read access to recorded forward values during the backward pass.
pub struct TapeCtx<'a, P: Real> {
    nodes: &'a [Node<P>],
}

impl<'a, P: Real> TapeCtx<'a, P> {
    pub fn value(&self, id: NodeId) -> &Tensor<P> {
        &self.nodes[id].value
    }
}

/// Gradient accumulator indexed by node id.
pub struct GradSink<P: Real> {
    bufs: Vec<Option<Vec<P>>>,
}

impl<P: Real> GradSink<P> {
    fn new(n: usize) -> Self {
        GradSink {
            bufs: (0..n).map(|_| None).collect(),
        }
    }

    /// Mutable gradient buffer for node `id`, zero-filled on first access.
    /// Contributions are added in the caller's iteration order, which is
    /// deterministic because the whole backward pass is single-threaded.
    pub fn acc(&mut self, id: NodeId, numel: usize) -> &mut [P] {
        self.bufs[id].get_or_insert_with(|| vec![P::ZERO; numel])
    }

    fn take(&mut self, id: NodeId) -> Option<Vec<P>> {
        self.bufs[id].take()
    }
}

/// Gradients of a scalar loss with respect to every parameter that influenced
/// it, keyed by parameter name in registration order.
pub struct GradientMap<P: Real> {
    grads: IndexMap<String, Tensor<P>>,
}

impl<P: Real> GradientMap<P> {
    pub fn get(&self, name: &str) -> Option<&Tensor<P>> {
        self.grads.get(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<P>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|g| g.all_finite())
    }
}

/// Eagerly built record of one forward pass.
///
/// Records are appended as operations execute, so inputs always precede the
/// records that consume them; backward visits each record exactly once in
/// reverse. A tape serves one forward/backward pass and is confined to a
/// single logical thread.
pub struct Tape<P: Real> {
    nodes: Vec<Node<P>>,
    params: HashMap<String, NodeId>,
    param_order: Vec<String>,
}

impl<P: Real> Tape<P> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a named parameter leaf. Its gradient appears in the
    /// [`GradientMap`] under `name` after [`Tape::backward`].
    pub fn param(&mut self, name: &str, value: Tensor<P>) -> Result<Tensor<P>> {
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        let id = self.push(Box::new(ParamOp), value);
        self.params.insert(name.to_string(), id);
        self.param_order.push(name.to_string());
        Ok(self.nodes[id].value.clone())
    }

    /// Register a constant leaf; no gradient is retained for it.
    pub fn constant(&mut self, value: Tensor<P>) -> Tensor<P> {
        let id = self.push(Box::new(ConstOp), value);
        self.nodes[id].value.clone()
    }

    /// Append a record whose forward value has already been computed.
    /// Returns the value re-tagged with the new node id.
    pub fn record(&mut self, op: Box<dyn TapeOp<P>>, value: Tensor<P>) -> Tensor<P> {
        let id = self.push(op, value);
        self.nodes[id].value.clone()
    }

    fn push(&mut self, op: Box<dyn TapeOp<P>>, value: Tensor<P>) -> NodeId {
        let id = self.nodes.len();
        let value = value.with_node(id);
        self.nodes.push(Node { op, value });
        id
    }

    /// Node id of `t`, lifting it onto the tape as a constant if detached.
    pub fn ensure(&mut self, t: &Tensor<P>) -> NodeId {
        match t.node() {
            Some(id) => id,
            None => {
                let lifted = self.constant(t.detached());
                lifted.node().expect("constant is on tape")
            }
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<P> {
        &self.nodes[id].value
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Walks the records once in reverse, accumulating vector-Jacobian
    /// products, and returns the gradients of every parameter reached.
    pub fn backward(&self, loss: &Tensor<P>) -> Result<GradientMap<P>> {
        let loss_id = loss.node().ok_or(TensorError::DetachedTensor)?;
        if !loss.is_scalar() {
            return Err(TensorError::LossNotScalar {
                shape: loss.shape().to_vec(),
            });
        }

        let mut sink = GradSink::new(self.nodes.len());
        sink.acc(loss_id, 1)[0] = P::ONE;

        let ctx = TapeCtx { nodes: &self.nodes };
        for id in (0..=loss_id).rev() {
            // Taking the buffer frees intermediate gradients as the sweep
            // moves past them.
            let Some(buf) = sink.take(id) else { continue };
            let node = &self.nodes[id];
            if node.op.inputs().is_empty() {
                // Leaf: retain parameter gradients, drop constant ones.
                if self.param_order.iter().any(|n| self.params[n] == id) {
                    sink.bufs[id] = Some(buf);
                }
                continue;
            }
            let grad_out = Tensor::from_vec(node.value.shape(), buf)?;
            node.op.backward(&ctx, &node.value, &grad_out, &mut sink);
        }

        let mut grads = IndexMap::new();
        for name in &self.param_order {
            let id = self.params[name];
            if let Some(buf) = sink.take(id) {
                let t = Tensor::from_vec(self.nodes[id].value.shape(), buf)?;
                grads.insert(name.clone(), t);
            }
        }
        Ok(GradientMap { grads })
    }
}

impl<P: Real> Default for Tape<P> {
    fn default() -> Self {
        Tape::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_detached_loss() {
        let tape = Tape::<f64>::new();
        let loss = Tensor::scalar(1.0);
        assert!(matches!(
            tape.backward(&loss),
            Err(TensorError::DetachedTensor)
        ));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .param("x", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert!(matches!(
            tape.backward(&x),
            Err(TensorError::LossNotScalar { .. })
        ));
    }

    #[test]
    fn duplicate_parameter_name_is_rejected() {
        let mut tape = Tape::<f64>::new();
        tape.param("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            tape.param("w", Tensor::scalar(2.0)),
            Err(TensorError::DuplicateParameter(_))
        ));
    }
}
