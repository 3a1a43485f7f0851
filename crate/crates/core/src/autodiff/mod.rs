//! Reverse-mode automatic differentiation over scalar expression graphs.
//!
//! A [`Tape`] is a Wengert list: every operation appends a node holding its
//! opcode, operand indices and forward value. Values are computed eagerly
//! while the graph is recorded, and the recorded opcodes can be replayed at
//! new leaf values with [`Tape::evaluate`]. [`Tape::backward`] sweeps the
//! list once in reverse and accumulates adjoints into every leaf.
//!
//! Domain violations (log of a non-positive number, division by zero, a
//! non-finite result) do not panic. The first offending node is remembered
//! and reported by [`Tape::check`] and [`Tape::backward`].

mod check;

pub use check::finite_difference_check;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Leaf(usize),
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Ln(Var),
    Exp(Var),
    Powf(Var, f64),
    Abs(Var),
    Sqrt(Var),
    Softplus(Var),
    Tanh(Var),
    Relu(Var),
    LnGamma(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Ln(_) => "ln",
            Op::Exp(_) => "exp",
            Op::Powf(..) => "powf",
            Op::Abs(_) => "abs",
            Op::Sqrt(_) => "sqrt",
            Op::Softplus(_) => "softplus",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::LnGamma(_) => "ln_gamma",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: f64,
}

#[derive(Debug, Clone)]
struct Fault {
    node: usize,
    op: &'static str,
    reason: String,
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Append-only expression graph with cached forward values.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<usize>,
    fault: Option<Fault>,
}

/// Partial derivatives of one output with respect to every leaf, in the
/// order the leaves were registered.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub partials: Vec<f64>,
    leaf_nodes: Vec<usize>,
}

impl Gradient {
    /// Partial derivative with respect to a leaf variable, or `None` if
    /// `var` is not a leaf.
    pub fn wrt(&self, var: Var) -> Option<f64> {
        self.leaf_nodes
            .iter()
            .position(|&n| n == var.0)
            .map(|i| self.partials[i])
    }

    pub fn len(&self) -> usize {
        self.partials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partials.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(nodes),
            ..Default::default()
        }
    }

    /// Drops every node and leaf while keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.leaves.clear();
        self.fault = None;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Registers a differentiable input.
    pub fn var(&mut self, value: f64) -> Var {
        let leaf = self.leaves.len();
        self.leaves.push(self.nodes.len());
        self.push_value(Op::Leaf(leaf), value)
    }

    /// A constant; gradients do not flow into it.
    pub fn constant(&mut self, value: f64) -> Var {
        self.push_value(Op::Const, value)
    }

    /// A constant copy of `a`'s current value (stop-gradient).
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a);
        self.constant(v)
    }

    pub fn value(&self, a: Var) -> f64 {
        self.nodes[a.0].value
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.leaves.iter().map(|&n| self.nodes[n].value).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Neg(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.push(Op::Ln(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        self.push(Op::Powf(a, exponent))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.push(Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push(Op::Sqrt(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.push(Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a))
    }

    pub fn ln_gamma(&mut self, a: Var) -> Var {
        self.push(Op::LnGamma(a))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let c = self.constant(k);
        self.add(a, c)
    }

    pub fn mul_const(&mut self, a: Var, k: f64) -> Var {
        let c = self.constant(k);
        self.mul(a, c)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Sum of several nodes; a zero constant for an empty slice.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Returns the first domain violation recorded since the last
    /// [`clear`](Self::clear) or [`evaluate`](Self::evaluate).
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            None => Ok(()),
            Some(f) => Err(Error::Eval {
                node: f.node,
                op: f.op,
                reason: f.reason.clone(),
            }),
        }
    }

    /// Replays the recorded graph with new leaf values.
    pub fn evaluate(&mut self, leaf_values: &[f64]) -> Result<()> {
        if leaf_values.len() != self.leaves.len() {
            return Err(Error::LengthMismatch {
                expected: self.leaves.len(),
                got: leaf_values.len(),
            });
        }
        self.fault = None;
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op;
            let value = match op {
                Op::Leaf(k) => leaf_values[k],
                Op::Const => self.nodes[i].value,
                _ => match self.compute(op) {
                    Ok(v) => v,
                    Err(reason) => {
                        self.record_fault(i, op, reason);
                        f64::NAN
                    }
                },
            };
            self.nodes[i].value = value;
            self.note_fault(i, op, value);
        }
        self.check()
    }

    /// Reverse sweep from `output`, returning ∂output/∂leaf for every leaf.
    pub fn backward(&self, output: Var) -> Result<Gradient> {
        if output.0 >= self.nodes.len() {
            return Err(Error::UnknownNode(output.0));
        }
        self.check()?;
        let mut adj = vec![0.0; output.0 + 1];
        adj[output.0] = 1.0;
        for i in (0..=output.0).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = &self.nodes[i];
            let val = |v: Var| self.nodes[v.0].value;
            match node.op {
                Op::Leaf(_) | Op::Const => {}
                Op::Add(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] += g;
                }
                Op::Sub(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] -= g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    adj[a.0] += g * vb;
                    adj[b.0] += g * va;
                }
                Op::Div(a, b) => {
                    let vb = val(b);
                    adj[a.0] += g / vb;
                    adj[b.0] -= g * node.value / vb;
                }
                Op::Neg(a) => adj[a.0] -= g,
                Op::Ln(a) => adj[a.0] += g / val(a),
                Op::Exp(a) => adj[a.0] += g * node.value,
                Op::Powf(a, p) => {
                    let d = if p == 0.0 {
                        0.0
                    } else if p == 1.0 {
                        1.0
                    } else if p == 2.0 {
                        2.0 * val(a)
                    } else {
                        p * val(a).powf(p - 1.0)
                    };
                    adj[a.0] += g * d;
                }
                Op::Abs(a) => {
                    let va = val(a);
                    // subgradient 0 at the kink
                    let s = if va > 0.0 {
                        1.0
                    } else if va < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    adj[a.0] += g * s;
                }
                Op::Sqrt(a) => adj[a.0] += g * 0.5 / node.value,
                Op::Softplus(a) => adj[a.0] += g * sigmoid(val(a)),
                Op::Tanh(a) => adj[a.0] += g * (1.0 - node.value * node.value),
                Op::Relu(a) => {
                    if val(a) > 0.0 {
                        adj[a.0] += g;
                    }
                }
                Op::LnGamma(a) => adj[a.0] += g * digamma(val(a)),
            }
        }
        let partials = self
            .leaves
            .iter()
            .map(|&n| adj.get(n).copied().unwrap_or(0.0))
            .collect();
        Ok(Gradient {
            partials,
            leaf_nodes: self.leaves.clone(),
        })
    }

    fn push(&mut self, op: Op) -> Var {
        let value = match self.compute(op) {
            Ok(v) => v,
            Err(reason) => {
                let node = self.nodes.len();
                self.record_fault(node, op, reason);
                f64::NAN
            }
        };
        self.push_value(op, value)
    }

    fn push_value(&mut self, op: Op, value: f64) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node { op, value });
        self.note_fault(idx, op, value);
        Var(idx)
    }

    fn note_fault(&mut self, idx: usize, op: Op, value: f64) {
        if !value.is_finite() {
            self.record_fault(idx, op, format!("non-finite value {value}"));
        }
    }

    fn record_fault(&mut self, node: usize, op: Op, reason: String) {
        if self.fault.is_none() {
            self.fault = Some(Fault {
                node,
                op: op.name(),
                reason,
            });
        }
    }

    fn compute(&self, op: Op) -> std::result::Result<f64, String> {
        let val = |v: Var| self.nodes[v.0].value;
        Ok(match op {
            Op::Leaf(_) | Op::Const => unreachable!("leaf values are supplied directly"),
            Op::Add(a, b) => val(a) + val(b),
            Op::Sub(a, b) => val(a) - val(b),
            Op::Mul(a, b) => val(a) * val(b),
            Op::Div(a, b) => {
                let d = val(b);
                if d == 0.0 {
                    return Err("division by zero".into());
                }
                val(a) / d
            }
            Op::Neg(a) => -val(a),
            Op::Ln(a) => {
                let x = val(a);
                if x <= 0.0 {
                    return Err(format!("log of non-positive value {x}"));
                }
                x.ln()
            }
            Op::Exp(a) => val(a).exp(),
            Op::Powf(a, p) => {
                let x = val(a);
                if x < 0.0 && p.fract() != 0.0 {
                    return Err(format!("negative base {x} with fractional exponent {p}"));
                }
                if p == 2.0 {
                    x * x
                } else {
                    x.powf(p)
                }
            }
            Op::Abs(a) => val(a).abs(),
            Op::Sqrt(a) => {
                let x = val(a);
                if x < 0.0 {
                    return Err(format!("square root of negative value {x}"));
                }
                x.sqrt()
            }
            Op::Softplus(a) => softplus(val(a)),
            Op::Tanh(a) => val(a).tanh(),
            Op::Relu(a) => val(a).max(0.0),
            Op::LnGamma(a) => {
                let x = val(a);
                if x <= 0.0 {
                    return Err(format!("log-gamma of non-positive value {x}"));
                }
                ln_gamma(x)
            }
        })
    }
}
