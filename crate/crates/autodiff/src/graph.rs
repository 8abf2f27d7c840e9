//! The computation tape.
//!
//! Every operation appends a node holding its forward value and, when any
//! parent requires a gradient, a backward closure. Parents always precede
//! their children on the tape, so a single reverse sweep over node indices
//! is a valid topological order and visits each node exactly once.

use std::cell::RefCell;

use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
    /// Set for views whose gradient is the parent's gradient verbatim.
    alias_of: Option<usize>,
}

/// Gradient accumulator handed to backward closures. Only parents of the
/// node being processed are reachable through it.
pub struct GradSink<'a, T> {
    grads: &'a mut [Option<Vec<T>>],
    nodes: &'a [Node<T>],
}

impl<T: Real> GradSink<'_, T> {
    /// Whether `v` participates in differentiation at all.
    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Mutable gradient buffer of `v`, zero-initialized on first access.
    /// Returns `None` for nodes that do not require gradients.
    pub fn buffer(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.wants(v) {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = &mut self.grads[v.0];
        Some(slot.get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }

    /// Adds `g` elementwise into the gradient of `v`.
    pub fn accumulate(&mut self, v: Var, g: &[T]) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => {
                debug_assert_eq!(buf.len(), g.len());
                for (b, &x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
            slot => *slot = Some(g.to_vec()),
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not influence the
    /// output, `None` when `v` does not require gradients.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        let shape = self.shapes.get(v.0)?;
        self.grads[v.0].as_ref().map(|g| Tensor::from_parts(shape.clone(), g.clone()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        let shape = self.shapes.get(v.0)?.clone();
        self.grads[v.0].take().map(|g| Tensor::from_parts(shape, g))
    }
}

/// Computation tape. Single-threaded; build one per forward/backward pass.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
    check_finite: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record: true,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// A tape that never records backward closures, for inference.
    pub fn inference() -> Self {
        Self { record: false, ..Self::new() }
    }

    /// Enables or disables the non-finite value check on every op output.
    /// On by default in debug builds.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient (a trainable parameter or an input
    /// being differentiated).
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push(value, self.record, None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, false, None)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Records an operation. `backward` receives the gradient of the new
    /// node and must accumulate into `parents` through the sink. The closure
    /// is dropped when no parent requires a gradient.
    pub fn op<F>(&self, name: &'static str, value: Tensor<T>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&[T], &mut GradSink<'_, T>) + 'static,
    {
        if self.check_finite && !value.all_finite() {
            panic!("{name}: produced a non-finite value");
        }
        let requires = self.record && parents.iter().any(|p| self.requires_grad(*p));
        let backward: Option<BackwardFn<T>> = if requires { Some(Box::new(backward)) } else { None };
        self.push(value, requires, backward)
    }

    /// Records a view of `parent` (same elements, new shape). Its gradient
    /// is handed to the parent without copying.
    pub(crate) fn view(&self, value: Tensor<T>, parent: Var) -> Var {
        debug_assert_eq!(value.numel(), self.nodes.borrow()[parent.0].value.numel());
        let requires = self.record && self.requires_grad(parent);
        let v = self.push(value, requires, None);
        self.nodes.borrow_mut()[v.0].alias_of = Some(parent.0);
        v
    }

    fn push(&self, value: Tensor<T>, requires_grad: bool, backward: Option<BackwardFn<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, requires_grad, backward, alias_of: None });
        Var(nodes.len() - 1)
    }

    /// Reverse sweep from a scalar output.
    ///
    /// # Panics
    /// If `output` does not hold exactly one element.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.0].value.numel(), 1, "backward requires a scalar output");
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![T::one()]);
        }
        for i in (0..=output.0).rev() {
            if let Some(p) = nodes[i].alias_of {
                if let Some(g) = grads[i].take() {
                    match &mut grads[p] {
                        Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, &x)| *b += x),
                        slot => *slot = Some(g),
                    }
                }
                continue;
            }
            let Some(backward) = nodes[i].backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            {
                let (parents, _) = grads.split_at_mut(i);
                let mut sink = GradSink { grads: parents, nodes: &nodes[..i] };
                backward(&g, &mut sink);
            }
            // interior gradients are consumed; only leaves are reported
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Gradients { grads, shapes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_leaf_is_one() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let grads = g.backward(x);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::<f64>::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, c).unwrap();
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn inference_graph_records_nothing() {
        let g = Graph::<f32>::inference();
        let x = g.param(Tensor::scalar(1.0));
        let y = g.square(x);
        assert!(!g.requires_grad(y));
    }

    #[test]
    fn fan_out_accumulates() {
        // d/dx (f(x) + f(x)) == 2 d/dx f(x), exactly
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::new([3], vec![0.3, -1.2, 2.5]).unwrap());
        let f = g.sum(g.square(g.tanh(x)));
        let single = g.backward(f).get(x).unwrap();
        let doubled = g.add(f, f).unwrap();
        let twice = g.backward(doubled).get(x).unwrap();
        for (a, b) in single.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_values_trip_the_check() {
        let mut g = Graph::<f64>::new();
        g.set_check_finite(true);
        let x = g.param(Tensor::scalar(-1.0));
        let _ = g.log(x);
    }
}
