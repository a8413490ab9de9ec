//! Scalar reverse-mode automatic differentiation on an append-only tape.
//!
//! Every arithmetic operation on a [`Var`] appends one node recording the
//! operation kind, its operand indices and the local partial derivatives.
//! [`Tape::grad`] runs a single reverse sweep and returns plain numbers.
//! [`Tape::grad_graph`] runs the same sweep but records the adjoint
//! computation on the tape itself, so the returned derivatives are `Var`s
//! that can be differentiated again. That is how a loss containing
//! `dy/dt` terms is differentiated with respect to network weights.
//!
//! ```
//! use drpinn::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x;
//! assert_eq!(tape.grad(y, &[x]).unwrap(), vec![6.0]);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Powi(usize, i32),
}

impl Op {
    fn operands(&self) -> (Option<usize>, Option<usize>) {
        match *self {
            Op::Leaf | Op::Const => (None, None),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => (Some(a), Some(b)),
            Op::Neg(a) | Op::Exp(a) | Op::Ln(a) | Op::Tanh(a) | Op::Powi(a, _) => (Some(a), None),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
    partials: [f64; 2],
}

/// Append-only computational graph.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// A scalar value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(cap)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, value, [0.0, 0.0])
    }

    /// Constant; never receives a gradient of its own.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, value, [0.0, 0.0])
    }

    fn push(&self, op: Op, value: f64, partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node {
            op,
            value,
            partials,
        });
        Var {
            tape: self,
            idx,
            value,
        }
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    /// Gradient of `output` with respect to each of `inputs`.
    ///
    /// Inputs that `output` does not depend on get `0.0`.
    pub fn grad(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<f64>> {
        if !self.owns(&output) || inputs.iter().any(|v| !self.owns(v)) {
            return Err(Error::CrossTape);
        }
        let adj = self.adjoints(output);
        Ok(inputs.iter().map(|v| adj[v.idx]).collect())
    }

    /// Adjoint of `output` with respect to every node up to and including it.
    pub fn adjoints(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; output.idx + 1];
        adj[output.idx] = 1.0;
        for i in (0..=output.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            match node.op.operands() {
                (Some(x), Some(y)) => {
                    adj[x] += a * node.partials[0];
                    adj[y] += a * node.partials[1];
                }
                (Some(x), None) => adj[x] += a * node.partials[0],
                _ => {}
            }
        }
        adj
    }

    /// Differentiable gradient: the adjoint sweep is itself recorded on this
    /// tape, so each returned `Var` can be fed into further computation and
    /// differentiated again.
    pub fn grad_graph<'t>(&'t self, output: Var<'t>, inputs: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if !self.owns(&output) || inputs.iter().any(|v| !self.owns(v)) {
            return Err(Error::CrossTape);
        }
        let end = output.idx;
        let mut adj: Vec<Option<Var<'t>>> = vec![None; end + 1];
        adj[end] = Some(self.constant(1.0));
        for i in (0..=end).rev() {
            let Some(a) = adj[i] else { continue };
            let (op, value) = {
                let n = self.nodes.borrow()[i];
                (n.op, n.value)
            };
            let me = Var {
                tape: self,
                idx: i,
                value,
            };
            let operand = |j: usize| Var {
                tape: self,
                idx: j,
                value: self.nodes.borrow()[j].value,
            };
            let mut acc = |j: usize, contrib: Var<'t>| {
                adj[j] = Some(match adj[j] {
                    Some(prev) => prev + contrib,
                    None => contrib,
                });
            };
            match op {
                Op::Leaf | Op::Const => {}
                Op::Add(x, y) => {
                    acc(x, a);
                    acc(y, a);
                }
                Op::Sub(x, y) => {
                    acc(x, a);
                    acc(y, -a);
                }
                Op::Mul(x, y) => {
                    acc(x, a * operand(y));
                    acc(y, a * operand(x));
                }
                Op::Div(x, y) => {
                    let d = operand(y);
                    acc(x, a / d);
                    acc(y, -(a * me) / d);
                }
                Op::Neg(x) => acc(x, -a),
                Op::Exp(x) => acc(x, a * me),
                Op::Ln(x) => acc(x, a / operand(x)),
                Op::Tanh(x) => acc(x, a * (1.0 - me * me)),
                Op::Powi(x, n) => {
                    let base = operand(x);
                    let d = if n == 1 {
                        self.constant(1.0)
                    } else {
                        base.powi(n - 1) * n as f64
                    };
                    acc(x, a * d);
                }
            }
        }
        Ok(inputs
            .iter()
            .map(|v| adj[v.idx].unwrap_or_else(|| self.constant(0.0)))
            .collect())
    }

    /// Recompute every node value from the leaves and constants.
    pub fn replay(&self) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut vals: Vec<f64> = Vec::with_capacity(nodes.len());
        for n in nodes.iter() {
            let v = match n.op {
                Op::Leaf | Op::Const => n.value,
                Op::Add(a, b) => vals[a] + vals[b],
                Op::Sub(a, b) => vals[a] - vals[b],
                Op::Mul(a, b) => vals[a] * vals[b],
                Op::Div(a, b) => vals[a] / vals[b],
                Op::Neg(a) => -vals[a],
                Op::Exp(a) => vals[a].exp(),
                Op::Ln(a) => vals[a].ln(),
                Op::Tanh(a) => tanh(vals[a]),
                Op::Powi(a, k) => ipow(vals[a], k),
            };
            vals.push(v);
        }
        vals
    }

    /// Stored primal values in node order.
    pub fn values(&self) -> Vec<f64> {
        self.nodes.borrow().iter().map(|n| n.value).collect()
    }

    /// Operation record of node `idx`.
    pub fn op(&self, idx: usize) -> Op {
        self.nodes.borrow()[idx].op
    }
}

impl<'t> Var<'t> {
    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn binary(self, rhs: Var<'t>, op: Op, value: f64, partials: [f64; 2]) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, rhs.tape),
            "arithmetic on variables from different tapes"
        );
        self.tape.push(op, value, partials)
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value.exp();
        self.tape.push(Op::Exp(self.idx), v, [v, 0.0])
    }

    pub fn ln(self) -> Var<'t> {
        self.tape
            .push(Op::Ln(self.idx), self.value.ln(), [1.0 / self.value, 0.0])
    }

    pub fn tanh(self) -> Var<'t> {
        let v = tanh(self.value);
        self.tape.push(Op::Tanh(self.idx), v, [1.0 - v * v, 0.0])
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * ipow(self.value, n - 1)
        };
        self.tape
            .push(Op::Powi(self.idx, n), ipow(self.value, n), [d, 0.0])
    }

    pub fn square(self) -> Var<'t> {
        self.powi(2)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add(self.idx, rhs.idx), self.value + rhs.value, [1.0, 1.0])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub(self.idx, rhs.idx), self.value - rhs.value, [1.0, -1.0])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(
            rhs,
            Op::Mul(self.idx, rhs.idx),
            self.value * rhs.value,
            [rhs.value, self.value],
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.binary(
            rhs,
            Op::Div(self.idx, rhs.idx),
            q,
            [1.0 / rhs.value, -q / rhs.value],
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(Op::Neg(self.idx), -self.value, [-1.0, 0.0])
    }
}

macro_rules! scalar_ops {
    ($($trait:ident $method:ident),*) => {$(
        impl<'t> $trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                let c = self.tape.constant(rhs);
                $trait::$method(self, c)
            }
        }
        impl<'t> $trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let c = rhs.tape.constant(self);
                $trait::$method(c, rhs)
            }
        }
    )*};
}

scalar_ops!(Add add, Sub sub, Mul mul, Div div);

/// Integer power by repeated multiplication. `f64::powi` may be lowered
/// differently at different call sites, which breaks tape replay.
fn ipow(x: f64, n: i32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n.unsigned_abs() {
        acc *= x;
    }
    if n < 0 {
        1.0 / acc
    } else {
        acc
    }
}

/// Sum of a non-empty slice of variables, accumulated left to right.
pub fn sum<'t>(vars: &[Var<'t>]) -> Option<Var<'t>> {
    let (first, rest) = vars.split_first()?;
    Some(rest.iter().fold(*first, |acc, &v| acc + v))
}

/// `tanh` via one `exp`; absolute error near machine epsilon, and about three
/// times faster than the libm routine.
#[inline]
pub fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn square() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x * x;
        assert_eq!(y.value(), 9.0);
        assert_eq!(tape.grad(y, &[x]).unwrap(), vec![6.0]);
    }

    #[test]
    fn tanh_matches_finite_difference() {
        let tape = Tape::new();
        let x = tape.var(0.5);
        let g = tape.grad(x.tanh(), &[x]).unwrap()[0];
        let fd = central_diff(f64::tanh, 0.5, 1e-6);
        assert!((g - fd).abs() < 1e-9);
        assert_relative_eq!(g, 0.786_447_732_965_927_5, max_relative = 1e-14);
    }

    #[test]
    fn product_plus_exp() {
        let tape = Tape::new();
        let x = tape.var(1.0);
        let y = tape.var(2.0);
        let f = x * y + x.exp();
        let g = tape.grad(f, &[x, y]).unwrap();
        assert_relative_eq!(g[0], 2.0 + std::f64::consts::E, max_relative = 1e-15);
        assert_eq!(g[1], 1.0);
    }

    #[test]
    fn unvisited_input_gets_zero() {
        let tape = Tape::new();
        let x = tape.var(1.0);
        let y = tape.var(2.0);
        let f = x * 3.0;
        assert_eq!(tape.grad(f, &[x, y]).unwrap(), vec![3.0, 0.0]);
    }

    #[test]
    fn cross_tape_is_error() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.var(1.0);
        let y = b.var(1.0);
        assert!(matches!(a.grad(x, &[y]), Err(Error::CrossTape)));
        assert!(matches!(a.grad_graph(x, &[y]), Err(Error::CrossTape)));
    }

    #[test]
    fn replay_reproduces_values() {
        let tape = Tape::new();
        let x = tape.var(0.3);
        let y = tape.var(-1.7);
        let z = ((x * y).tanh() + (x / y).exp()).powi(3) - (-x) + (y * y).ln();
        let _ = tape.grad_graph(z, &[x, y]).unwrap();
        assert_eq!(tape.replay(), tape.values());
    }

    #[test]
    fn operands_precede_node() {
        let tape = Tape::new();
        let x = tape.var(0.3);
        let z = (x * x).tanh() / (x + 1.0);
        let _ = tape.grad_graph(z, &[x]).unwrap();
        for i in 0..tape.len() {
            let (a, b) = tape.op(i).operands();
            assert!(a.map_or(true, |a| a < i));
            assert!(b.map_or(true, |b| b < i));
        }
    }

    #[test]
    fn second_derivative_of_tanh() {
        // d²/dx² tanh = -2 tanh (1 - tanh²)
        let tape = Tape::new();
        let x = tape.var(0.4);
        let dy = tape.grad_graph(x.tanh(), &[x]).unwrap()[0];
        let d2 = tape.grad(dy, &[x]).unwrap()[0];
        let t = 0.4f64.tanh();
        assert_relative_eq!(d2, -2.0 * t * (1.0 - t * t), max_relative = 1e-14);
    }

    #[test]
    fn mixed_second_derivative() {
        // loss = (d/dt (w tanh t))^2 = w^2 (1 - tanh^2 t)^2
        let tape = Tape::new();
        let w = tape.var(1.0);
        let t = tape.var(0.5);
        let y = w * t.tanh();
        let dy = tape.grad_graph(y, &[t]).unwrap()[0];
        let loss = dy * dy;
        let g = tape.grad(loss, &[w]).unwrap()[0];
        let s = 1.0 - 0.5f64.tanh().powi(2);
        assert_relative_eq!(g, 2.0 * 1.0 * s * s, max_relative = 1e-14);
        let fd = central_diff(|w| (w * s).powi(2), 1.0, 1e-6);
        assert_relative_eq!(g, fd, max_relative = 1e-6);
    }

    #[test]
    fn powi_zero_and_one() {
        let tape = Tape::new();
        let x = tape.var(2.5);
        assert_eq!(tape.grad(x.powi(0), &[x]).unwrap(), vec![0.0]);
        assert_eq!(tape.grad(x.powi(1), &[x]).unwrap(), vec![1.0]);
        let d = tape.grad_graph(x.powi(1), &[x]).unwrap()[0];
        assert_eq!(d.value(), 1.0);
    }
}
