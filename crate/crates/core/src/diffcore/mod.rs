//! Reverse-mode automatic differentiation over a small set of dense
//! tensor primitives.
//!
//! A [`Graph`] is an append-only arena of nodes. Every node caches its value,
//! so building an expression also evaluates it. Inputs can be re-bound and the
//! whole graph recomputed in creation order, which is a valid topological
//! order because operands always precede their users.
//!
//! Two reverse passes are provided:
//!
//! * [`Graph::grad`] appends the adjoint computation to the graph itself. The
//!   returned gradients are ordinary nodes and can be differentiated again,
//!   which is how second-order quantities (the gradient of a loss taken after
//!   a gradient step) are obtained.
//! * [`Graph::grad_values`] runs the same rules numerically without growing
//!   the graph. Use it for the last derivative in a chain.
//!
//! Values are `f64` tensors of shape `rows x cols`. Vectors are `n x 1`,
//! scalars `1 x 1`; matrices are row-major. Binary elementwise operations
//! broadcast a scalar operand against a tensor of any shape.

mod backward;
mod graph;
pub mod kernels;

pub use graph::{Graph, Op, DEFAULT_NODE_CAP};

use std::fmt;

/// Handle to a node of a [`Graph`].
///
/// A `Var` is only meaningful for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn len(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn is_vector(self) -> bool {
        self.cols == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("input {var} is not bound")]
    Unbound { var: Var },
    #[error("binding for {var} has {got} values, expected {expected}")]
    BindingShape {
        var: Var,
        expected: usize,
        got: usize,
    },
    #[error("{var} is not an input node")]
    NotAnInput { var: Var },
    #[error("non-finite value produced by {op} at {var}")]
    NonFinite { var: Var, op: &'static str },
    #[error("graph exceeded its node cap of {cap}")]
    TooLarge { cap: usize },
    #[error("expected a scalar output, {var} has shape {shape}")]
    NotScalar { var: Var, shape: Shape },
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Partial derivatives of a scalar output with respect to a list of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub wrt: Vec<Var>,
    pub partials: Vec<Vec<f64>>,
}

impl GradVector {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.wrt
            .iter()
            .position(|&v| v == var)
            .map(|i| self.partials[i].as_slice())
    }

    /// All partials concatenated in `wrt` order.
    pub fn flatten(&self) -> Vec<f64> {
        self.partials.iter().flatten().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.partials
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}
