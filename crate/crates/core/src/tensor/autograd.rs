use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tag describing which operation produced a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Square,
    Abs,
    SmoothL1,
    SignedPow,
    ClampMin,
    Sum,
    Mean,
    Reshape,
    Concat,
    Slice,
    Conv2d,
    BiasAdd,
    DepthwiseConv2d,
    DepthwiseConvTranspose2d,
    PixelShuffle,
    PixelUnshuffle,
    GlobalAvgPool,
    ScaleChannels,
    ScalePixels,
}

/// Maps the output gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

pub(crate) struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: RefCell<Option<Tensor<T>>>,
    kind: OpKind,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A tensor recorded in a computation graph.
///
/// Cloning a `Var` is cheap and shares the node. A graph lives as long as any
/// `Var` referencing its root.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("kind", &self.0.kind)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    /// A leaf whose gradient is tracked.
    pub fn parameter(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    /// A leaf without gradient tracking.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            kind: OpKind::Leaf,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Records an operation node. `backward` is dropped when no parent needs
    /// a gradient.
    pub(crate) fn from_op(
        value: Tensor<T>,
        kind: OpKind,
        parents: Vec<Var<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Var(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            kind,
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn kind(&self) -> OpKind {
        self.0.kind
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Gradient accumulated by the last backward passes, if any.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Reverse-mode sweep from a one-element root.
    ///
    /// Gradients are accumulated additively into every node that requires
    /// them, so a node feeding several consumers receives the sum of the
    /// branch gradients, and repeated calls keep accumulating.
    pub fn backward(&self) -> Result<()> {
        if self.0.value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node<T>, Tensor<T>> = HashMap::new();
        pending.insert(
            Rc::as_ptr(&self.0),
            Tensor::ones(self.0.value.shape()),
        );
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&Rc::as_ptr(&node.0)) else {
                continue;
            };
            if let Some(bw) = &node.0.backward {
                let parent_grads = bw(&g);
                debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), parent.shape(), "{:?}", node.0.kind);
                    match pending.entry(Rc::as_ptr(&parent.0)) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            accumulate(e.get_mut(), &pg)
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(pg);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(existing) => accumulate(existing, &g),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients, parents first.
    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !visited.insert(Rc::as_ptr(&v.0)) {
                continue;
            }
            stack.push((v.clone(), true));
            for p in &v.0.parents {
                if p.requires_grad() && !visited.contains(&Rc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

fn accumulate<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}
