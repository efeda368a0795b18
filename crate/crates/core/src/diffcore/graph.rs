use super::kernels as k;
use super::{DiffError, Result, Shape, Var};

/// Default limit on the number of nodes a graph may hold.
pub const DEFAULT_NODE_CAP: usize = 10_000_000;

/// Node kinds. Operand references always point at earlier nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    PowI(Var, i32),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Elu(Var),
    Relu(Var),
    Sin(Var),
    Cos(Var),
    /// Derivative of elu.
    EluDeriv(Var),
    /// `exp(x)` for `x < 0`, else 0.
    ExpNeg(Var),
    /// Heaviside step, zero at the origin.
    Step(Var),
    Clamp(Var, f64, f64),
    ClampMask(Var, f64, f64),
    Sum(Var),
    Dot(Var, Var),
    /// Matrix times vector.
    MatVec(Var, Var),
    /// Transposed matrix times vector.
    MatTVec(Var, Var),
    Outer(Var, Var),
    /// Scalar broadcast to the node shape.
    Broadcast(Var),
    /// Contiguous sub-range of the operand starting at the given offset.
    Slice(Var, usize),
    /// Operand written into zeros of the node shape at the given offset.
    Pad(Var, usize),
    Concat(Box<[Var]>),
    Reshape(Var),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Const => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::PowI(..) => "pow-int",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Elu(..) => "elu",
            Op::Relu(..) => "relu",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::EluDeriv(..) => "elu-deriv",
            Op::ExpNeg(..) => "exp-neg",
            Op::Step(..) => "step",
            Op::Clamp(..) => "clamp",
            Op::ClampMask(..) => "clamp-mask",
            Op::Sum(..) => "sum",
            Op::Dot(..) => "dot",
            Op::MatVec(..) => "matvec",
            Op::MatTVec(..) => "matvec-t",
            Op::Outer(..) => "outer",
            Op::Broadcast(..) => "broadcast",
            Op::Slice(..) => "slice",
            Op::Pad(..) => "pad",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
        }
    }

    /// Operands in a fixed order.
    pub fn operands(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Const => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Dot(a, b)
            | Op::MatVec(a, b)
            | Op::MatTVec(a, b)
            | Op::Outer(a, b) => vec![*a, *b],
            Op::Neg(x)
            | Op::PowI(x, _)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Tanh(x)
            | Op::Elu(x)
            | Op::Relu(x)
            | Op::Sin(x)
            | Op::Cos(x)
            | Op::EluDeriv(x)
            | Op::ExpNeg(x)
            | Op::Step(x)
            | Op::Clamp(x, ..)
            | Op::ClampMask(x, ..)
            | Op::Sum(x)
            | Op::Broadcast(x)
            | Op::Slice(x, _)
            | Op::Pad(x, _)
            | Op::Reshape(x) => vec![*x],
            Op::Concat(parts) => parts.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: Shape,
    pub(crate) offset: usize,
}

/// Append-only expression arena with cached values.
///
/// A graph is confined to one thread; independent graphs share nothing.
#[derive(Clone, Debug)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) values: Vec<f64>,
    unbound: Vec<Var>,
    cap: usize,
    overflow: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_cap(DEFAULT_NODE_CAP)
    }

    pub fn with_cap(cap: usize) -> Self {
        Graph {
            nodes: Vec::new(),
            values: Vec::new(),
            unbound: Vec::new(),
            cap,
            overflow: false,
        }
    }

    /// Drops every node while keeping the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.unbound.clear();
        self.overflow = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.index()].op
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.index()].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.index()];
        &self.values[n.offset..n.offset + n.shape.len()]
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert!(self.shape(v).is_scalar(), "{v} is not scalar");
        self.values[self.nodes[v.index()].offset]
    }

    fn push(&mut self, op: Op, shape: Shape) -> Var {
        if self.nodes.len() >= self.cap {
            self.overflow = true;
        }
        let offset = self.values.len();
        self.values.resize(offset + shape.len(), 0.0);
        let idx = self.nodes.len();
        self.nodes.push(Node { op, shape, offset });
        self.eval_node(idx);
        Var(idx as u32)
    }

    // ---- leaves ----

    /// A bound input with the given values.
    pub fn input(&mut self, shape: Shape, values: &[f64]) -> Var {
        assert_eq!(shape.len(), values.len(), "input shape/value mismatch");
        let v = self.push(Op::Input, shape);
        self.write(v, values);
        v
    }

    pub fn input_vec(&mut self, values: &[f64]) -> Var {
        self.input(Shape::vector(values.len()), values)
    }

    pub fn input_scalar(&mut self, x: f64) -> Var {
        self.input(Shape::SCALAR, &[x])
    }

    /// An input without a value. Evaluation fails until it is bound.
    pub fn placeholder(&mut self, shape: Shape) -> Var {
        let v = self.push(Op::Input, shape);
        self.write(v, &vec![f64::NAN; shape.len()]);
        self.unbound.push(v);
        v
    }

    pub fn constant(&mut self, shape: Shape, values: &[f64]) -> Var {
        assert_eq!(shape.len(), values.len(), "constant shape/value mismatch");
        let v = self.push(Op::Const, shape);
        self.write(v, values);
        v
    }

    pub fn constant_vec(&mut self, values: &[f64]) -> Var {
        self.constant(Shape::vector(values.len()), values)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(Shape::SCALAR, &[x])
    }

    pub fn zeros(&mut self, shape: Shape) -> Var {
        self.constant(shape, &vec![0.0; shape.len()])
    }

    fn write(&mut self, v: Var, values: &[f64]) {
        let n = &self.nodes[v.index()];
        self.values[n.offset..n.offset + n.shape.len()].copy_from_slice(values);
    }

    // ---- elementwise ----

    fn broadcast_shape(&self, a: Var, b: Var) -> Shape {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            sa
        } else if sa.is_scalar() {
            sb
        } else if sb.is_scalar() {
            sa
        } else {
            panic!("incompatible shapes {sa} and {sb}");
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let s = self.broadcast_shape(a, b);
        self.push(Op::Add(a, b), s)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let s = self.broadcast_shape(a, b);
        self.push(Op::Sub(a, b), s)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let s = self.broadcast_shape(a, b);
        self.push(Op::Mul(a, b), s)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let s = self.broadcast_shape(a, b);
        self.push(Op::Div(a, b), s)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Neg(x), s)
    }

    pub fn powi(&mut self, x: Var, k: i32) -> Var {
        let s = self.shape(x);
        self.push(Op::PowI(x, k), s)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.powi(x, 2)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Exp(x), s)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Log(x), s)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Tanh(x), s)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Elu(x), s)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Relu(x), s)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Sin(x), s)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Cos(x), s)
    }

    pub fn elu_deriv(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::EluDeriv(x), s)
    }

    pub fn exp_neg(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::ExpNeg(x), s)
    }

    pub fn step(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        self.push(Op::Step(x), s)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clamp bounds reversed");
        let s = self.shape(x);
        self.push(Op::Clamp(x, lo, hi), s)
    }

    pub fn clamp_mask(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let s = self.shape(x);
        self.push(Op::ClampMask(x, lo, hi), s)
    }

    /// `a * c` for a plain constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = self.scalar_const(c);
        self.mul(a, k)
    }

    // ---- reductions and linear algebra ----

    pub fn sum(&mut self, x: Var) -> Var {
        self.push(Op::Sum(x), Shape::SCALAR)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.shape(a).len(),
            self.shape(b).len(),
            "dot length mismatch"
        );
        self.push(Op::Dot(a, b), Shape::SCALAR)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (sw, sx) = (self.shape(w), self.shape(x));
        assert!(
            sx.is_vector() && sw.cols == sx.rows,
            "matvec shape mismatch {sw} * {sx}"
        );
        self.push(Op::MatVec(w, x), Shape::vector(sw.rows))
    }

    pub fn matvec_t(&mut self, w: Var, v: Var) -> Var {
        let (sw, sv) = (self.shape(w), self.shape(v));
        assert!(
            sv.is_vector() && sw.rows == sv.rows,
            "matvec_t shape mismatch {sw}^T * {sv}"
        );
        self.push(Op::MatTVec(w, v), Shape::vector(sw.cols))
    }

    pub fn outer(&mut self, u: Var, v: Var) -> Var {
        let (su, sv) = (self.shape(u), self.shape(v));
        assert!(su.is_vector() && sv.is_vector(), "outer needs vectors");
        self.push(Op::Outer(u, v), Shape::matrix(su.rows, sv.rows))
    }

    pub fn broadcast(&mut self, x: Var, shape: Shape) -> Var {
        assert!(self.shape(x).is_scalar(), "broadcast needs a scalar");
        self.push(Op::Broadcast(x), shape)
    }

    pub fn slice(&mut self, x: Var, start: usize, shape: Shape) -> Var {
        assert!(
            start + shape.len() <= self.shape(x).len(),
            "slice out of range"
        );
        self.push(Op::Slice(x, start), shape)
    }

    /// Element `i` of `x` as a scalar.
    pub fn elem(&mut self, x: Var, i: usize) -> Var {
        self.slice(x, i, Shape::SCALAR)
    }

    pub fn pad(&mut self, x: Var, start: usize, shape: Shape) -> Var {
        assert!(
            start + self.shape(x).len() <= shape.len(),
            "pad out of range"
        );
        self.push(Op::Pad(x, start), shape)
    }

    /// Concatenates the flattened operands into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let n = parts.iter().map(|&p| self.shape(p).len()).sum();
        self.push(Op::Concat(parts.into()), Shape::vector(n))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Var {
        assert_eq!(self.shape(x).len(), shape.len(), "reshape changes length");
        self.push(Op::Reshape(x), shape)
    }

    // ---- evaluation ----

    fn eval_node(&mut self, idx: usize) {
        let node = &self.nodes[idx];
        let offset = node.offset;
        let shape = node.shape;
        let (before, rest) = self.values.split_at_mut(offset);
        let out = &mut rest[..shape.len()];
        let nodes = &self.nodes;
        let val = |v: &Var| {
            let n = &nodes[v.index()];
            &before[n.offset..n.offset + n.shape.len()]
        };
        match &node.op {
            Op::Input | Op::Const => {}
            Op::Add(a, b) => binary(val(a), val(b), out, |x, y| x + y),
            Op::Sub(a, b) => binary(val(a), val(b), out, |x, y| x - y),
            Op::Mul(a, b) => binary(val(a), val(b), out, |x, y| x * y),
            Op::Div(a, b) => binary(val(a), val(b), out, |x, y| x / y),
            Op::Neg(x) => unary(val(x), out, |x| -x),
            Op::PowI(x, p) => {
                let p = *p;
                unary(val(x), out, |x| k::powi(x, p))
            }
            Op::Exp(x) => unary(val(x), out, f64::exp),
            Op::Log(x) => unary(val(x), out, f64::ln),
            Op::Tanh(x) => unary(val(x), out, f64::tanh),
            Op::Elu(x) => unary(val(x), out, k::elu),
            Op::Relu(x) => unary(val(x), out, k::relu),
            Op::Sin(x) => unary(val(x), out, f64::sin),
            Op::Cos(x) => unary(val(x), out, f64::cos),
            Op::EluDeriv(x) => unary(val(x), out, k::elu_deriv),
            Op::ExpNeg(x) => unary(val(x), out, k::exp_neg),
            Op::Step(x) => unary(val(x), out, k::step),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                unary(val(x), out, |x| k::clamp(x, lo, hi))
            }
            Op::ClampMask(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                unary(val(x), out, |x| k::clamp_mask(x, lo, hi))
            }
            Op::Sum(x) => out[0] = k::sum(val(x)),
            Op::Dot(a, b) => out[0] = k::dot(val(a), val(b)),
            Op::MatVec(w, x) => {
                let sw = nodes[w.index()].shape;
                k::matvec(val(w), val(x), sw.rows, sw.cols, out)
            }
            Op::MatTVec(w, v) => {
                let sw = nodes[w.index()].shape;
                k::matvec_t(val(w), val(v), sw.rows, sw.cols, out)
            }
            Op::Outer(u, v) => k::outer(val(u), val(v), out),
            Op::Broadcast(x) => {
                let c = val(x)[0];
                out.iter_mut().for_each(|o| *o = c);
            }
            Op::Slice(x, start) => out.copy_from_slice(&val(x)[*start..*start + shape.len()]),
            Op::Pad(x, start) => {
                let src = val(x);
                out.iter_mut().for_each(|o| *o = 0.0);
                out[*start..*start + src.len()].copy_from_slice(src);
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for p in parts.iter() {
                    let src = val(p);
                    out[at..at + src.len()].copy_from_slice(src);
                    at += src.len();
                }
            }
            Op::Reshape(x) => out.copy_from_slice(val(x)),
        }
    }

    /// Sets the value of an input node. Does not recompute dependents.
    pub fn bind(&mut self, var: Var, values: &[f64]) -> Result<()> {
        let node = &self.nodes[var.index()];
        if node.op != Op::Input {
            return Err(DiffError::NotAnInput { var });
        }
        if node.shape.len() != values.len() {
            return Err(DiffError::BindingShape {
                var,
                expected: node.shape.len(),
                got: values.len(),
            });
        }
        self.write(var, values);
        self.unbound.retain(|&u| u != var);
        Ok(())
    }

    /// Re-evaluates every node in creation order.
    pub fn recompute(&mut self) -> Result<()> {
        if let Some(&var) = self.unbound.first() {
            return Err(DiffError::Unbound { var });
        }
        if self.overflow {
            return Err(DiffError::TooLarge { cap: self.cap });
        }
        for idx in 0..self.nodes.len() {
            self.eval_node(idx);
        }
        self.check_all()
    }

    /// Re-evaluates nodes up to and including `upto`. Later nodes keep stale
    /// values, so inputs created after `upto` may still be unbound.
    pub fn recompute_through(&mut self, upto: Var) -> Result<()> {
        if let Some(&var) = self.unbound.iter().find(|u| **u <= upto) {
            return Err(DiffError::Unbound { var });
        }
        if self.overflow {
            return Err(DiffError::TooLarge { cap: self.cap });
        }
        for idx in 0..=upto.index() {
            self.eval_node(idx);
        }
        self.first_non_finite(upto.index() + 1)
    }

    /// Binds the given inputs, re-evaluates, and returns the scalar `output`.
    pub fn evaluate(&mut self, output: Var, bindings: &[(Var, &[f64])]) -> Result<f64> {
        for (var, values) in bindings {
            self.bind(*var, values)?;
        }
        self.recompute()?;
        self.expect_scalar(output)?;
        Ok(self.scalar(output))
    }

    pub(crate) fn expect_scalar(&self, v: Var) -> Result<()> {
        let shape = self.shape(v);
        if shape.is_scalar() {
            Ok(())
        } else {
            Err(DiffError::NotScalar { var: v, shape })
        }
    }

    /// Fails if the graph overflowed, an input is unbound, or any node up to
    /// and including `upto` holds a non-finite value. The first offending
    /// node in creation order is reported, which is where a NaN or infinity
    /// originated.
    pub fn check(&self, upto: Var) -> Result<()> {
        if self.overflow {
            return Err(DiffError::TooLarge { cap: self.cap });
        }
        if let Some(&var) = self.unbound.iter().find(|u| **u <= upto) {
            return Err(DiffError::Unbound { var });
        }
        self.first_non_finite(upto.index() + 1)
    }

    fn check_all(&self) -> Result<()> {
        self.first_non_finite(self.nodes.len())
    }

    fn first_non_finite(&self, end: usize) -> Result<()> {
        for (idx, node) in self.nodes[..end].iter().enumerate() {
            let vals = &self.values[node.offset..node.offset + node.shape.len()];
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(DiffError::NonFinite {
                    var: Var(idx as u32),
                    op: node.op.name(),
                });
            }
        }
        Ok(())
    }
}

#[inline]
fn unary(x: &[f64], out: &mut [f64], f: impl Fn(f64) -> f64) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = f(v);
    }
}

#[inline]
fn binary(a: &[f64], b: &[f64], out: &mut [f64], f: impl Fn(f64, f64) -> f64) {
    if a.len() == b.len() {
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = f(x, y);
        }
    } else if a.len() == 1 {
        let x = a[0];
        for (o, &y) in out.iter_mut().zip(b) {
            *o = f(x, y);
        }
    } else {
        let y = b[0];
        for (o, &x) in out.iter_mut().zip(a) {
            *o = f(x, y);
        }
    }
}
