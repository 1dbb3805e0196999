//! Reverse-mode differentiation over a Wengert list.
//!
//! Glue arithmetic is recorded as scalar nodes. Network evaluations are
//! recorded as single fused nodes holding their layer activations, so a
//! whole forward pass costs one node and its adjoint is a vector-Jacobian
//! product over the cached activations.

use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Contiguous run of leaf variables holding a network's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBlock {
    start: usize,
    len: usize,
}

impl ParamBlock {
    pub fn var(&self, i: usize) -> Var {
        assert!(i < self.len, "parameter index {i} out of block of {}", self.len);
        Var(self.start + i)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// A network as seen by an [`Ops`] backend: frozen, or with its parameters
/// recorded as a differentiable block.
#[derive(Debug, Clone, Copy)]
pub struct Bound<'n> {
    pub net: &'n Mlp,
    pub params: Option<ParamBlock>,
}

impl<'n> Bound<'n> {
    pub fn frozen(net: &'n Mlp) -> Self {
        Self { net, params: None }
    }
}

/// Scalar arithmetic shared by plain evaluation and the tape.
///
/// Control and simulator code is written once against this trait so the
/// value seen on the tape is bit-identical to the undifferentiated path.
pub trait Ops<'n> {
    type S: Copy;

    fn constant(&mut self, x: f64) -> Self::S;
    fn value(&self, a: Self::S) -> f64;
    fn add(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn sub(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn mul(&mut self, a: Self::S, b: Self::S) -> Self::S;
    /// `scale * a + shift`
    fn affine(&mut self, a: Self::S, scale: f64, shift: f64) -> Self::S;
    fn tanh(&mut self, a: Self::S) -> Self::S;
    /// Subgradient 0 at the kink.
    fn abs(&mut self, a: Self::S) -> Self::S;
    fn clamp(&mut self, a: Self::S, lo: f64, hi: f64) -> Self::S;
    fn mlp(&mut self, net: Bound<'n>, x: &[Self::S]) -> Result<Self::S>;

    fn sum(&mut self, xs: &[Self::S]) -> Self::S {
        let mut acc = self.constant(0.0);
        for &x in xs {
            acc = self.add(acc, x);
        }
        acc
    }
}

/// Plain `f64` evaluation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl<'n> Ops<'n> for Eval {
    type S = f64;

    fn constant(&mut self, x: f64) -> f64 {
        x
    }
    fn value(&self, a: f64) -> f64 {
        a
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn affine(&mut self, a: f64, scale: f64, shift: f64) -> f64 {
        scale * a + shift
    }
    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }
    fn abs(&mut self, a: f64) -> f64 {
        a.abs()
    }
    fn clamp(&mut self, a: f64, lo: f64, hi: f64) -> f64 {
        a.clamp(lo, hi)
    }
    fn mlp(&mut self, net: Bound<'n>, x: &[f64]) -> Result<f64> {
        net.net.forward_scalar(x)
    }
    fn sum(&mut self, xs: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    }
}

enum Node<'n> {
    Leaf,
    Unary { a: usize, da: f64 },
    Binary { a: usize, da: f64, b: usize, db: f64 },
    Net(Box<NetNode<'n>>),
}

struct NetNode<'n> {
    net: &'n Mlp,
    params: Option<ParamBlock>,
    inputs: Vec<usize>,
    acts: Vec<f64>,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape<'n> {
    values: Vec<f64>,
    nodes: Vec<Node<'n>>,
}

/// Adjoints of every recorded value with respect to one output.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> f64 {
        self.adjoints[v.0]
    }

    pub fn block(&self, b: ParamBlock) -> &[f64] {
        &self.adjoints[b.start..b.start + b.len]
    }
}

impl<'n> Tape<'n> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: f64, node: Node<'n>) -> Var {
        self.values.push(value);
        self.nodes.push(node);
        Var(self.values.len() - 1)
    }

    /// Independent variable.
    pub fn var(&mut self, x: f64) -> Var {
        self.push(x, Node::Leaf)
    }

    /// Records a network's parameters as leaves and binds them to it.
    pub fn bind(&mut self, net: &'n Mlp) -> Bound<'n> {
        let start = self.values.len();
        for &p in net.params() {
            self.push(p, Node::Leaf);
        }
        Bound {
            net,
            params: Some(ParamBlock {
                start,
                len: net.params().len(),
            }),
        }
    }

    /// Leaf block of arbitrary values.
    pub fn block(&mut self, xs: &[f64]) -> ParamBlock {
        let start = self.values.len();
        for &x in xs {
            self.push(x, Node::Leaf);
        }
        ParamBlock {
            start,
            len: xs.len(),
        }
    }

    pub fn backward(&self, output: Var) -> Gradients {
        let mut adj = vec![0.0; self.values.len()];
        adj[output.0] = 1.0;
        let mut dx = Vec::new();
        for i in (0..=output.0).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match &self.nodes[i] {
                Node::Leaf => {}
                Node::Unary { a, da } => adj[*a] += g * da,
                Node::Binary { a, da, b, db } => {
                    adj[*a] += g * da;
                    adj[*b] += g * db;
                }
                Node::Net(node) => {
                    dx.clear();
                    dx.resize(node.inputs.len(), 0.0);
                    match node.params {
                        Some(b) => {
                            let (head, _) = adj.split_at_mut(i);
                            let params = &self.values[b.start..b.start + b.len];
                            node.net.backward(
                                params,
                                &node.acts,
                                &[g],
                                Some(&mut head[b.start..b.start + b.len]),
                                &mut dx,
                            );
                        }
                        None => {
                            node.net
                                .backward(node.net.params(), &node.acts, &[g], None, &mut dx)
                        }
                    }
                    for (&k, d) in node.inputs.iter().zip(&dx) {
                        adj[k] += d;
                    }
                }
            }
        }
        Gradients { adjoints: adj }
    }
}

impl<'n> Ops<'n> for Tape<'n> {
    type S = Var;

    fn constant(&mut self, x: f64) -> Var {
        self.push(x, Node::Leaf)
    }

    fn value(&self, a: Var) -> f64 {
        self.values[a.0]
    }

    fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0] + self.values[b.0];
        self.push(v, Node::Binary { a: a.0, da: 1.0, b: b.0, db: 1.0 })
    }

    fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0] - self.values[b.0];
        self.push(v, Node::Binary { a: a.0, da: 1.0, b: b.0, db: -1.0 })
    }

    fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.0], self.values[b.0]);
        self.push(va * vb, Node::Binary { a: a.0, da: vb, b: b.0, db: va })
    }

    fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = scale * self.values[a.0] + shift;
        self.push(v, Node::Unary { a: a.0, da: scale })
    }

    fn tanh(&mut self, a: Var) -> Var {
        let y = self.values[a.0].tanh();
        self.push(y, Node::Unary { a: a.0, da: 1.0 - y * y })
    }

    fn abs(&mut self, a: Var) -> Var {
        let x = self.values[a.0];
        let s = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.push(x.abs(), Node::Unary { a: a.0, da: s })
    }

    fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let x = self.values[a.0];
        let da = if (lo..=hi).contains(&x) { 1.0 } else { 0.0 };
        self.push(x.clamp(lo, hi), Node::Unary { a: a.0, da })
    }

    fn mlp(&mut self, net: Bound<'n>, x: &[Var]) -> Result<Var> {
        net.net.check_input(x.len())?;
        if net.net.output_size() != 1 {
            return Err(Error::structural("tape networks must have a single output"));
        }
        let inputs: Vec<f64> = x.iter().map(|v| self.values[v.0]).collect();
        let mut acts = Vec::new();
        match net.params {
            Some(b) => {
                net.net
                    .forward_cached(&self.values[b.start..b.start + b.len], &inputs, &mut acts)
            }
            None => net.net.forward_cached(net.net.params(), &inputs, &mut acts),
        }
        let y = *acts.last().unwrap();
        let node = NetNode {
            net: net.net,
            params: net.params,
            inputs: x.iter().map(|v| v.0).collect(),
            acts,
        };
        Ok(self.push(y, Node::Net(Box::new(node))))
    }

    fn sum(&mut self, xs: &[Var]) -> Var {
        match xs.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => {
                let mut acc = first;
                for &x in rest {
                    acc = self.add(acc, x);
                }
                acc
            }
        }
    }
}
