use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::{numel, Real};

thread_local! {
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn next_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Computes parent gradients from the output gradient. The second argument
/// flags which parents actually need one; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Real> {
    id: usize,
    data: Rc<Vec<T>>,
    shape: Vec<usize>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Immutable n-dimensional array that records how it was computed.
///
/// Cloning is cheap (reference counted). Node ids increase monotonically per
/// thread, so reverse id order is a valid reverse topological order.
pub struct Tensor<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Self {
        assert_eq!(
            data.len(),
            numel(shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            data: Rc::new(data),
            shape: shape.to_vec(),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Leaf that does not take part in differentiation.
    pub fn constant(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(data, shape, false)
    }

    /// Leaf whose gradient is reported by [`Tensor::backward`].
    pub fn variable(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(vec![T::zero(); numel(shape)], shape)
    }

    pub fn full(value: T, shape: &[usize]) -> Self {
        Self::constant(vec![value; numel(shape)], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::constant(vec![value], &[1])
    }

    /// Builds an interior node. Parents that do not require gradients are
    /// pruned from the graph; if none do, the result is a plain constant.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::leaf(data, &shape, false);
        }
        Tensor(Rc::new(Node {
            id: next_id(),
            data: Rc::new(data),
            shape,
            requires_grad,
            parents,
            backward: Some(backward),
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match *self.shape() {
            [n, c, h, w] => (n, c, h, w),
            ref s => panic!("expected a 4-d tensor, got shape {s:?}"),
        }
    }

    pub fn dims2(&self) -> (usize, usize) {
        match *self.shape() {
            [a, b] => (a, b),
            ref s => panic!("expected a 2-d tensor, got shape {s:?}"),
        }
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<T>> {
        Rc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            data: Rc::clone(&self.0.data),
            shape: self.0.shape.clone(),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Reverse-mode sweep from a single-element tensor.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(self.numel(), 1, "backward() requires a scalar output");
        let mut grads = Gradients::default();
        if !self.requires_grad() {
            return grads;
        }

        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            for p in &t.0.parents {
                stack.push(p.clone());
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in order {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    grads.map.insert(node.id(), grad);
                }
                Some(f) => {
                    let needs: Vec<bool> =
                        node.0.parents.iter().map(|p| p.requires_grad()).collect();
                    let parent_grads = f(&grad, &needs);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for ((p, g), need) in node.0.parents.iter().zip(parent_grads).zip(needs) {
                        let (Some(g), true) = (g, need) else {
                            continue;
                        };
                        debug_assert_eq!(g.len(), p.numel());
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                            None => {
                                pending.insert(p.id(), g);
                            }
                        }
                    }
                }
            }
        }
        grads
    }
}

/// Gradients of a scalar with respect to the leaf variables it depends on.
#[derive(Debug)]
pub struct Gradients<T> {
    map: HashMap<usize, Vec<T>>,
}

impl<T> Default for Gradients<T> {
    fn default() -> Self {
        Self {
            map: HashMap::new(),
        }
    }
}

impl<T: Real> Gradients<T> {
    /// Gradient for `t`, or `None` when the output does not depend on it.
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient for `t`, with zeros when the output does not depend on it.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Vec<T> {
        self.get(t)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); t.numel()])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
