use std::collections::{BTreeMap, HashMap};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A differentiable operation recorded on a [`Graph`].
///
/// `forward` may cache intermediates on `self`; `backward` receives the same
/// inputs plus the cached output and returns one gradient per input (or `None`
/// where `needs[i]` is false).
pub trait Op {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor>;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Option<Box<dyn Op>>,
    parents: Vec<NodeId>,
    requires_grad: bool,
    param: Option<String>,
}

/// Define-by-run reverse-mode graph.
///
/// Nodes are evaluated eagerly as they are appended, so insertion order is a
/// topological order. Sources are inputs (no gradient), variables (gradient
/// tracked) and named parameters.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_source(&mut self, value: Tensor, requires_grad: bool, param: Option<String>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: None,
            parents: Vec::new(),
            requires_grad,
            param,
        });
        id
    }

    /// Constant source; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_source(value, false, None)
    }

    /// Source whose gradient is tracked (used for gradient checks on inputs).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push_source(value, true, None)
    }

    /// Named parameter from `store`. Repeated requests for the same name
    /// return the same node so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?
            .clone();
        let id = self.push_source(value, true, Some(name.to_string()));
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Records `op` applied to `parents` and evaluates it immediately.
    pub fn apply<O: Op + 'static>(&mut self, mut op: O, parents: &[NodeId]) -> Result<NodeId> {
        let value = {
            let inputs: Vec<&Tensor> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
            op.forward(&inputs)?
        };
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Some(Box::new(op)),
            parents: parents.to_vec(),
            requires_grad,
            param: None,
        });
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Name of the producing op, or `"source"`/`"param"` for graph sources.
    pub fn op_tag(&self, id: NodeId) -> &'static str {
        let node = &self.nodes[id.0];
        match (&node.op, &node.param) {
            (Some(op), _) => op.name(),
            (None, Some(_)) => "param",
            (None, None) => "source",
        }
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    /// Replaces the data of a source node. Call [`Graph::forward`] afterwards
    /// to refresh downstream values.
    pub fn set_value(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if node.op.is_some() {
            return Err(Error::Invalid("set_value on a non-source node".into()));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("{:?} vs {:?}", node.value.shape(), value.shape()),
            ));
        }
        node.value = value;
        Ok(())
    }

    /// Re-evaluates every op node in topological (insertion) order.
    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if let Some(op) = node.op.as_mut() {
                let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &before[p.0].value).collect();
                node.value = op.forward(&inputs)?;
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else { continue };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let parent_grads = op.backward(&inputs, &node.value, &grad, &needs)?;
            for ((p, g), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape(), "{}", op.name());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // Keep the gradient of op nodes around for inspection.
            grads[i] = Some(grad);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.clone().map(|name| (name, NodeId(i))))
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, NodeId)>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, if any flowed there.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradients keyed by parameter name. Parameters the root does not depend
    /// on are reported as zeros of the right shape.
    pub fn param_grads(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, id)| {
                let g = self
                    .wrt(*id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.value(*id).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
