use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{axis_split, gemm, reduce_to, Tensor};
use super::AutodiffError;

pub(crate) type NodeId = usize;

pub(crate) enum Op {
    Leaf,
    Param,
    /// `grad_p = reduce(g ⊙ partial_p)` for each parent; covers all pointwise primitives.
    Elementwise { parents: Vec<NodeId>, partials: Vec<Tensor> },
    /// Pointwise sum with broadcasting; partials are ±1.
    Linear { parents: Vec<(NodeId, f64)> },
    MatMul(NodeId, NodeId),
    SumAxis { x: NodeId, axis: usize },
    SumAll(NodeId),
    Softmax { x: NodeId, axis: usize },
    LogSumExp { x: NodeId, axis: usize, soft: Tensor },
    IndexSelect { x: NodeId, axis: usize, indices: Vec<usize> },
    Concat { xs: Vec<NodeId>, axis: usize },
    Reshape(NodeId),
    Transpose(NodeId),
}

pub(crate) struct Node {
    pub value: Rc<Tensor>,
    pub op: Op,
    pub requires_grad: bool,
}

/// A define-by-run computation graph.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    adjoints: RefCell<Vec<Option<Tensor>>>,
    bound: RefCell<HashMap<ParamId, NodeId>>,
    grad_enabled: bool,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::with_grad(true)
    }

    /// Graph that records values only; no node requires a gradient.
    pub fn inference() -> Self {
        Graph::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Graph {
            nodes: RefCell::new(Vec::with_capacity(1024)),
            adjoints: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
            grad_enabled,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    pub(crate) fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub(crate) fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// A constant leaf: never receives gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    pub fn vector(&self, v: Vec<f64>) -> Var<'_> {
        self.constant(Tensor::vector(v))
    }

    /// A differentiable leaf that is not backed by a stored parameter.
    pub fn variable(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a stored parameter (unconstrained value). Repeated binds in one
    /// graph return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.bound.borrow().get(&id) {
            return Var { graph: self, id: node };
        }
        let entry = store.entry(id);
        let v = self.push(entry.value.clone(), Op::Param, entry.trainable);
        self.bound.borrow_mut().insert(id, v.id);
        v
    }

    /// Seed `root` with 1 and accumulate adjoints into every reachable node.
    /// Repeated calls add to previously accumulated adjoints.
    pub fn backward(&self, root: Var<'_>) -> Result<(), AutodiffError> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::new();
        adj.resize_with(root.id + 1, || None);
        adj[root.id] = Some(Tensor::full(root_node.value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g_owned) = adj[id].take() else { continue };
            let g = &g_owned;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Elementwise { parents, partials } => {
                    for (&p, partial) in parents.iter().zip(partials) {
                        if !nodes[p].requires_grad {
                            continue;
                        }
                        let mut local = Tensor::from_shape(g.shape(), g.data().to_vec());
                        for (a, b) in local.data_mut().iter_mut().zip(partial.data()) {
                            *a *= *b;
                        }
                        let contrib = reduce_to(&local, nodes[p].value.shape());
                        accumulate(&mut adj, p, contrib);
                    }
                }
                Op::Linear { parents } => {
                    for &(p, c) in parents {
                        if !nodes[p].requires_grad {
                            continue;
                        }
                        let mut contrib = reduce_to(g, nodes[p].value.shape());
                        if c != 1.0 {
                            contrib.scale_in_place(c);
                        }
                        accumulate(&mut adj, p, contrib);
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    if nodes[*a].requires_grad {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), false, bv.data(), true, &mut da);
                        accumulate(&mut adj, *a, Tensor::from_shape(&[m, k], da));
                    }
                    if nodes[*b].requires_grad {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, av.data(), true, g.data(), false, &mut db);
                        accumulate(&mut adj, *b, Tensor::from_shape(&[k, n], db));
                    }
                }
                Op::SumAll(x) => {
                    let shape = nodes[*x].value.shape();
                    accumulate(&mut adj, *x, Tensor::full(shape, g.item()));
                }
                Op::SumAxis { x, axis } => {
                    let shape = nodes[*x].value.shape();
                    let (outer, len, inner) = axis_split(shape, *axis);
                    let mut data = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            let dst = &mut data[(o * len + l) * inner..(o * len + l + 1) * inner];
                            dst.copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::from_shape(shape, data));
                }
                Op::Softmax { x, axis } => {
                    let y = &node.value;
                    let (outer, len, inner) = axis_split(y.shape(), *axis);
                    let mut data = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| g.data()[at(l)] * y.data()[at(l)]).sum();
                            for l in 0..len {
                                data[at(l)] = y.data()[at(l)] * (g.data()[at(l)] - dot);
                            }
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::from_shape(y.shape(), data));
                }
                Op::LogSumExp { x, axis, soft } => {
                    let (outer, len, inner) = axis_split(soft.shape(), *axis);
                    let mut data = vec![0.0; soft.len()];
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                let at = (o * len + l) * inner + i;
                                data[at] = g.data()[o * inner + i] * soft.data()[at];
                            }
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::from_shape(soft.shape(), data));
                }
                Op::IndexSelect { x, axis, indices } => {
                    let shape = nodes[*x].value.shape();
                    let (outer, len, inner) = axis_split(shape, *axis);
                    let k = indices.len();
                    let mut data = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for (j, &src) in indices.iter().enumerate() {
                            for i in 0..inner {
                                data[(o * len + src) * inner + i] += g.data()[(o * k + j) * inner + i];
                            }
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::from_shape(shape, data));
                }
                Op::Concat { xs, axis } => {
                    let (outer, total, inner) = axis_split(g.shape(), *axis);
                    let mut start = 0;
                    for &p in xs {
                        let shape = nodes[p].value.shape();
                        let len = shape[*axis];
                        if nodes[p].requires_grad {
                            let mut data = Vec::with_capacity(outer * len * inner);
                            for o in 0..outer {
                                let from = (o * total + start) * inner;
                                data.extend_from_slice(&g.data()[from..from + len * inner]);
                            }
                            accumulate(&mut adj, p, Tensor::from_shape(shape, data));
                        }
                        start += len;
                    }
                }
                Op::Reshape(x) => {
                    let shape = nodes[*x].value.shape();
                    accumulate(&mut adj, *x, Tensor::from_shape(shape, g.data().to_vec()));
                }
                Op::Transpose(x) => {
                    let (r, c) = (g.shape()[0], g.shape()[1]);
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            data[j * r + i] = g.data()[i * c + j];
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::from_shape(&[c, r], data));
                }
            }
            adj[id] = Some(g_owned);
        }
        drop(nodes);

        let mut store = self.adjoints.borrow_mut();
        if store.len() < adj.len() {
            store.resize_with(adj.len(), || None);
        }
        for (id, a) in adj.into_iter().enumerate() {
            if let Some(a) = a {
                accumulate(&mut store, id, a);
            }
        }
        Ok(())
    }

    /// Accumulated adjoint of `v`, zeros if it never received gradient.
    pub fn grad(&self, v: Var<'_>) -> Tensor {
        let store = self.adjoints.borrow();
        match store.get(v.id).and_then(|a| a.as_ref()) {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.nodes.borrow()[v.id].value.shape()),
        }
    }

    pub fn zero_grads(&self) {
        self.adjoints.borrow_mut().clear();
    }

    /// Adjoints of every bound parameter.
    pub fn gradients(&self, store: &ParamStore) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        let adj = self.adjoints.borrow();
        for (&pid, &node) in self.bound.borrow().iter() {
            if let Some(Some(a)) = adj.get(node) {
                grads.add_to(pid, a);
            }
        }
        grads
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
    match &mut adj[id] {
        Some(existing) => existing.add_assign(&contrib),
        slot @ None => *slot = Some(contrib),
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Shared handle to the node value.
    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Same value, no gradient path.
    pub fn stop_gradient(self) -> Var<'g> {
        let v = (*self.value()).clone();
        self.graph.constant(v)
    }
}
