use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::float::Float;

/// Every tensor is rank 4 (`N×C×H×W`); lower-rank data uses trailing ones.
pub type Shape = [usize; 4];

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph. Results are plain leaves.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of a recorded operation.
pub(crate) trait Backward<T: Float> {
    fn inputs(&self) -> Vec<&Tensor<T>>;
    /// Accumulates input gradients given the gradient of the output.
    fn backward(&self, out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>);
}

struct Inner<T: Float> {
    id: usize,
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn Backward<T>>>,
}

/// Immutable, reference-counted tensor node. Cloning is cheap and keeps the
/// same identity.
pub struct Tensor<T: Float>(Rc<Inner<T>>);

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Float> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: Shape) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length does not match shape {shape:?}"
        );
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad: false,
            grad_fn: None,
        }))
    }

    pub fn from_f64(data: &[f64], shape: Shape) -> Self {
        Self::from_vec(data.iter().map(|&v| T::from_f64(v)).collect(), shape)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::from_vec(vec![T::zero(); numel(&shape)], shape)
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self::from_vec(vec![value; numel(&shape)], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(vec![value], [1, 1, 1, 1])
    }

    /// A trainable leaf with the same contents.
    pub fn into_param(self) -> Self {
        let shape = self.shape();
        let data = match Rc::try_unwrap(self.0) {
            Ok(inner) => inner.data,
            Err(rc) => rc.data.clone(),
        };
        Self::param(data, shape)
    }

    /// A trainable leaf holding `data`.
    pub fn param(data: Vec<T>, shape: Shape) -> Self {
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad: true,
            grad_fn: None,
        }))
    }

    pub(crate) fn from_op(data: Vec<T>, shape: Shape, op: Box<dyn Backward<T>>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        let track = grad_enabled() && op.inputs().iter().any(|t| t.requires_grad());
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad: track,
            grad_fn: if track { Some(op) } else { None },
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }
    pub fn shape(&self) -> Shape {
        self.0.shape
    }
    pub fn numel(&self) -> usize {
        self.0.data.len()
    }
    pub fn data(&self) -> &[T] {
        &self.0.data
    }
    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }
    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }
    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }
    /// True when both handles point at the same node (same storage).
    pub fn same_storage(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.numel(),
            1,
            "item() on a tensor of shape {:?}",
            self.shape()
        );
        self.0.data[0]
    }

    /// New leaf sharing no graph with `self`.
    pub fn detach(&self) -> Self {
        Self::from_vec(self.to_vec(), self.shape())
    }

    /// Converts the element type, producing a leaf.
    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor::from_vec(
            self.data()
                .iter()
                .map(|v| U::from_f64(v.as_f64()))
                .collect(),
            self.shape(),
        )
    }

    /// Reverse-mode sweep from this single-element tensor.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(self.numel(), 1, "backward() needs a scalar output");
        let order = topo_order(self);
        let mut acc = GradAcc {
            grads: HashMap::new(),
        };
        let mut leaves = HashMap::new();
        acc.grads.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(grad) = acc.grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                Some(op) => op.backward(node, &grad, &mut acc),
                None => {
                    leaves.insert(node.id(), grad);
                }
            }
        }
        Gradients { grads: leaves }
    }
}

fn topo_order<T: Float>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    // iterative post-order DFS
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !node.requires_grad() || !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(op) = &node.0.grad_fn {
            for input in op.inputs() {
                if input.requires_grad() && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

pub(crate) struct GradAcc<T: Float> {
    grads: HashMap<usize, Vec<T>>,
}

impl<T: Float> GradAcc<T> {
    /// Mutable gradient buffer for `t`, or `None` if `t` takes no gradient.
    pub(crate) fn slot(&mut self, t: &Tensor<T>) -> Option<&mut [T]> {
        if !t.requires_grad() {
            return None;
        }
        Some(
            self.grads
                .entry(t.id())
                .or_insert_with(|| vec![T::zero(); t.numel()])
                .as_mut_slice(),
        )
    }
}

/// Gradients of leaf tensors, keyed by node identity.
pub struct Gradients<T: Float> {
    grads: HashMap<usize, Vec<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id()).map(|g| g.as_slice())
    }

    /// Gradient of `t`, zeros if it did not influence the output.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Vec<T> {
        self.get(t)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); t.numel()])
    }
}
