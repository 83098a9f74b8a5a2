//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Operations append nodes to a linear tape during the forward pass;
//! `backward` walks the tape in reverse and accumulates gradients via the
//! chain rule. A tape is built for one forward/backward pass and dropped
//! afterwards. Gradients are only propagated into subgraphs that reach a
//! tracked leaf (a parameter), so large constant inputs such as the
//! propagation matrix cost nothing extra.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    /// Matrix + row-vector broadcast over rows.
    AddBias(Var, Var),
    ConcatCols(Var, Var),
    /// Total sum of all entries, producing a 1x1 scalar.
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Vec<f64>,
    op: Op,
    tracked: bool,
}

/// Recorded forward pass. Topological by construction: a node's inputs
/// always precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// Saturation would return exactly 0.0 / 1.0 for |x| beyond ~37 and break
// the strict gate bounds, so outputs are clamped to the nearest
// representable values inside the open interval.
fn stable_sigmoid(x: f64) -> f64 {
    let v = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    v.clamp(f64::MIN_POSITIVE, 1.0_f64.next_down())
}

fn bounded_tanh(x: f64) -> f64 {
    x.tanh().clamp((-1.0_f64).next_up(), 1.0_f64.next_down())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        let grad = vec![0.0; value.numel()];
        self.nodes.push(Node {
            value,
            grad,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an input that does not require gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Record a parameter leaf; gradients accumulate here during `backward`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated at `v` by the last `backward` call.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Matmul(a, b), tracked))
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err(name, a, b));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(shape, out)?, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| k * x).collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked(a);
        self.push(Tensor::new(shape, out).unwrap(), Op::Scale(a, k), tracked)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked(a);
        self.push(Tensor::new(shape, out).unwrap(), op, tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, bounded_tanh, Op::Tanh(a))
    }

    /// Absolute value; the subgradient at exact zeros is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// `m + b` with the `1 x q` row vector `b` broadcast over the rows of `m`.
    pub fn add_bias(&mut self, m: Var, b: Var) -> Result<Var> {
        let (tm, tb) = (self.value(m), self.value(b));
        if tb.rows() != 1 || tb.cols() != tm.cols() {
            return Err(self.shape_err("add_bias", m, b));
        }
        let (rows, cols) = (tm.rows(), tm.cols());
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(tm.get(r, c) + tb.data()[c]);
            }
        }
        let tracked = self.tracked(m) || self.tracked(b);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::AddBias(m, b), tracked))
    }

    /// Columns of `a` followed by columns of `b`; row counts must agree.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(self.shape_err("concat_cols", a, b));
        }
        let (n, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(&ta.data()[r * p..(r + 1) * p]);
            out.extend_from_slice(&tb.data()[r * q..(r + 1) * q]);
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::matrix(n, p + q, out)?,
            Op::ConcatCols(a, b),
            tracked,
        ))
    }

    /// Sum of all entries as a `1x1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    /// Reverse accumulation from a scalar `loss` into every tracked node.
    /// Leaves not reachable from `loss` keep zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].tracked {
                continue;
            }
            // Split borrows: everything strictly before idx may receive
            // gradient pushes; x's own grad and value are read-only here.
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let g = &node.grad;
            match node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, n) = (node.value.rows(), node.value.cols());
                    let k = before[a.0].value.cols();
                    if before[a.0].tracked {
                        // dA += dC * B^T
                        let bdat: Vec<f64> = before[b.0].value.data().to_vec();
                        let ga = &mut before[a.0].grad;
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bdat[p * n + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    }
                    if before[b.0].tracked {
                        // dB += A^T * dC
                        let adat: Vec<f64> = before[a.0].value.data().to_vec();
                        let gb = &mut before[b.0].grad;
                        for p in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += adat[i * k + p] * g[i * n + j];
                                }
                                gb[p * n + j] += s;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if before[a.0].tracked {
                        for (ga, gi) in before[a.0].grad.iter_mut().zip(g) {
                            *ga += gi;
                        }
                    }
                    if before[b.0].tracked {
                        for (gb, gi) in before[b.0].grad.iter_mut().zip(g) {
                            *gb += gi;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if before[a.0].tracked {
                        for (ga, gi) in before[a.0].grad.iter_mut().zip(g) {
                            *ga += gi;
                        }
                    }
                    if before[b.0].tracked {
                        for (gb, gi) in before[b.0].grad.iter_mut().zip(g) {
                            *gb -= gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if before[a.0].tracked {
                        let bdat: Vec<f64> = before[b.0].value.data().to_vec();
                        for ((ga, gi), bv) in before[a.0].grad.iter_mut().zip(g).zip(&bdat) {
                            *ga += gi * bv;
                        }
                    }
                    if before[b.0].tracked {
                        let adat: Vec<f64> = before[a.0].value.data().to_vec();
                        for ((gb, gi), av) in before[b.0].grad.iter_mut().zip(g).zip(&adat) {
                            *gb += gi * av;
                        }
                    }
                }
                Op::Scale(a, kf) => {
                    if before[a.0].tracked {
                        for (ga, gi) in before[a.0].grad.iter_mut().zip(g) {
                            *ga += kf * gi;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if before[a.0].tracked {
                        let y = node.value.data();
                        for ((ga, gi), yi) in before[a.0].grad.iter_mut().zip(g).zip(y) {
                            *ga += gi * yi * (1.0 - yi);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if before[a.0].tracked {
                        let y = node.value.data();
                        for ((ga, gi), yi) in before[a.0].grad.iter_mut().zip(g).zip(y) {
                            *ga += gi * (1.0 - yi * yi);
                        }
                    }
                }
                Op::Abs(a) => {
                    if before[a.0].tracked {
                        let x = before[a.0].value.data().to_vec();
                        for ((ga, gi), xi) in before[a.0].grad.iter_mut().zip(g).zip(&x) {
                            *ga += gi * if *xi > 0.0 {
                                1.0
                            } else if *xi < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                        }
                    }
                }
                Op::AddBias(m_in, b_in) => {
                    let cols = node.value.cols();
                    if before[m_in.0].tracked {
                        for (gm, gi) in before[m_in.0].grad.iter_mut().zip(g) {
                            *gm += gi;
                        }
                    }
                    if before[b_in.0].tracked {
                        let gb = &mut before[b_in.0].grad;
                        for (i, gi) in g.iter().enumerate() {
                            gb[i % cols] += gi;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let p = before[a.0].value.cols();
                    let q = before[b.0].value.cols();
                    let rows = node.value.rows();
                    if before[a.0].tracked {
                        let ga = &mut before[a.0].grad;
                        for r in 0..rows {
                            for c in 0..p {
                                ga[r * p + c] += g[r * (p + q) + c];
                            }
                        }
                    }
                    if before[b.0].tracked {
                        let gb = &mut before[b.0].grad;
                        for r in 0..rows {
                            for c in 0..q {
                                gb[r * q + c] += g[r * (p + q) + p + c];
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if before[a.0].tracked {
                        let gi = g[0];
                        for ga in before[a.0].grad.iter_mut() {
                            *ga += gi;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
