//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable node in a dynamically built graph. Operations
//! produce new nodes that remember their parents and a local backward rule;
//! [`Tensor::backward`] sweeps the graph in reverse topological order and
//! returns a [`GradientMap`] keyed by the identity of every reachable leaf
//! that requires a gradient.
//!
//! Leaves carry no graph edges and are `Send + Sync`, so parameter snapshots
//! can be shared across threads. A graph built on top of them is meant to be
//! driven from a single thread.

pub mod gradcheck;
pub mod init;
mod nn;
mod ops;

pub use nn::Unary;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{CmtaError, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Local backward rule: maps the output gradient to one optional gradient per
/// parent. Entries for parents that require a gradient must be `Some`.
type BackwardFn = Box<dyn Fn(&[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Identity of a tensor node, stable for the node's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("leaf", &self.is_leaf())
            .finish()
    }
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(CmtaError::contract(format!(
            "tensor shape must be a non-empty list of positive sizes, got {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    if n != data_len {
        return Err(CmtaError::contract(format!(
            "shape {shape:?} holds {n} values but {data_len} were given"
        )));
    }
    Ok(())
}

impl Tensor {
    /// Constant tensor (no gradient).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        Ok(Tensor::leaf(data, shape.to_vec(), false))
    }

    /// Trainable leaf: gradients are reported for it by `backward`.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        Ok(Tensor::leaf(data, shape.to_vec(), true))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![value], vec![1], false)
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Tensor::new(vec![0.0; shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        Tensor::new(vec![value; shape.iter().product()], shape)
    }

    pub fn eye(n: usize) -> Result<Tensor> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::new(data, &[n, n])
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor(Arc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad_fn: None,
        }))
    }

    /// Builds an op output. The backward rule is dropped when no parent needs
    /// a gradient, so constant subgraphs stay leaves.
    pub(crate) fn from_op<F>(data: Vec<f64>, shape: Vec<usize>, parents: Vec<Tensor>, backward: F) -> Tensor
    where
        F: Fn(&[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Tensor(Arc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    pub fn id(&self) -> TensorId {
        TensorId(self.0.id)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True when the tensor has no graph edges.
    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(CmtaError::contract(format!(
                "item() needs a single element, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(CmtaError::contract(format!("expected a 2-D tensor, got shape {s:?}"))),
        }
    }

    /// Same values, cut from the graph: no parents and no gradient.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    /// Leaf copy of this tensor that requires a gradient.
    pub fn to_param(&self) -> Tensor {
        Tensor::leaf(self.0.data.clone(), self.0.shape.clone(), true)
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self) -> Result<GradientMap> {
        if self.numel() != 1 {
            return Err(CmtaError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let mut map = GradientMap::default();
        if !self.requires_grad() {
            return Ok(map);
        }

        // Post-order DFS over the requires_grad subgraph.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id);
        while let Some((node, child)) = stack.pop() {
            let parents = node.0.grad_fn.as_ref().map(|g| g.parents.as_slice()).unwrap_or(&[]);
            if child < parents.len() {
                let p = parents[child].clone();
                stack.push((node, child + 1));
                if p.requires_grad() && visited.insert(p.0.id) {
                    stack.push((p, 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            match &node.0.grad_fn {
                Some(gf) => {
                    let parent_grads = (gf.backward)(&g, &gf.parents);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for (p, pg) in gf.parents.iter().zip(parent_grads) {
                        if !p.requires_grad() {
                            continue;
                        }
                        let pg = pg.expect("backward rule omitted a required gradient");
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.0.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.0.id, pg);
                            }
                        }
                    }
                }
                None => {
                    map.grads.insert(node.id(), (node.shape().to_vec(), g));
                }
            }
        }
        Ok(map)
    }
}

/// Gradients of a scalar loss with respect to the trainable leaves it reaches.
#[derive(Debug, Default, Clone)]
pub struct GradientMap {
    grads: HashMap<TensorId, (Vec<usize>, Vec<f64>)>,
}

impl GradientMap {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(|(_, g)| g.as_slice())
    }

    pub fn contains(&self, t: &Tensor) -> bool {
        self.grads.contains_key(&t.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.grads.keys().copied()
    }

    /// Gradient as a constant tensor of the leaf's shape.
    pub fn tensor(&self, t: &Tensor) -> Option<Tensor> {
        self.grads
            .get(&t.id())
            .map(|(shape, g)| Tensor::leaf(g.clone(), shape.clone(), false))
    }
}
