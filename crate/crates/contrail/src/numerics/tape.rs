//! Reverse-mode gradient tape over dense tensors.
//!
//! Operations are recorded in issue order; since every op only references
//! earlier nodes, a reverse scan of the node list is a valid reverse
//! topological order for backpropagation. All kernels are plain f64 loops,
//! so identical inputs produce bitwise identical outputs.

use super::tensor::{dot_slices, log_sigmoid, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Dot(Var, Var),
    /// scalar * vector
    ScalarMul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LogSigmoid(Var),
    Softmax(Var),
    Sum(Var),
    Concat(Var, Var),
    Stack(Vec<Var>),
    Index(Var, usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward computation and replays it in reverse for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zero if `v` did not reach the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.slots[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros_like(tape.value(v)),
        }
    }

    /// Accumulate the gradient of `v` into `acc` (`acc += grad`).
    pub fn accumulate(&self, v: Var, acc: &mut Tensor) {
        if let Some(g) = &self.slots[v.0] {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
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

    /// The forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Record an input (constant or parameter snapshot).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        self.leaf(Tensor::zeros(shape))
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), data))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), data))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), data))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = map(self.value(a), |x| c * x);
        self.push(Op::Scale(a, c), data)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let data = map(self.value(a), |x| -x);
        self.push(Op::Neg(a), data)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out).expect("matmul shape");
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Matrix–vector product: `[r,c] x [c] -> [r]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.value(m).shape().to_vec(), self.value(v).shape().to_vec());
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: sm,
                rhs: sv,
            });
        }
        let (r, c) = (sm[0], sm[1]);
        let md = self.value(m).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; r];
        for i in 0..r {
            out[i] = dot_slices(&md[i * c..(i + 1) * c], vd);
        }
        Ok(self.push(Op::MatVec(m, v), Tensor::vector(out)))
    }

    /// Inner product of two equal-length vectors; yields a scalar node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 1 || sa != sb {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let s = dot_slices(self.value(a).data(), self.value(b).data());
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(s)))
    }

    /// Scalar node times arbitrary tensor.
    pub fn scalar_mul(&mut self, s: Var, v: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "scalar_mul",
                lhs: self.value(s).shape().to_vec(),
                rhs: self.value(v).shape().to_vec(),
            });
        }
        let c = self.value(s).item();
        let data = map(self.value(v), |x| c * x);
        Ok(self.push(Op::ScalarMul(s, v), data))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = map(self.value(a), sigmoid);
        self.push(Op::Sigmoid(a), data)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = map(self.value(a), f64::tanh);
        self.push(Op::Tanh(a), data)
    }

    /// Elementwise log sigmoid(x), computed as -softplus(-x).
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let data = map(self.value(a), log_sigmoid);
        self.push(Op::LogSigmoid(a), data)
    }

    /// Softmax over a 1-D tensor (max-shifted for stability).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let out = exps.into_iter().map(|e| e / z).collect();
        Ok(self.push(Op::Softmax(a), Tensor::vector(out)))
    }

    /// Sum of all elements; yields a scalar node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Concatenate two 1-D tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 1 || sb.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        Ok(self.push(Op::Concat(a, b), Tensor::vector(data)))
    }

    /// Stack scalar nodes into a 1-D tensor.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            if !self.value(p).is_scalar() {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: self.value(p).shape().to_vec(),
                    rhs: vec![1],
                });
            }
            data.push(self.value(p).item());
        }
        Ok(self.push(Op::Stack(parts.to_vec()), Tensor::vector(data)))
    }

    /// Element `i` of a 1-D tensor as a scalar node.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 1 || i >= t.numel() {
            return Err(Error::contract(format!(
                "index {i} out of bounds for shape {:?}",
                t.shape()
            )));
        }
        let x = t.data()[i];
        Ok(self.push(Op::Index(a, i), Tensor::scalar(x)))
    }

    /// Mean of a list of scalar nodes.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("mean of empty list"));
        }
        let stacked = self.stack(parts)?;
        let total = self.sum(stacked);
        Ok(self.scale(total, 1.0 / parts.len() as f64))
    }

    /// Reverse pass from a scalar loss node. Gradients satisfy the chain
    /// rule and are reproducible bit-for-bit for a fixed graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward expects a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = slots[idx].clone() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    add_grad(&mut slots, *a, g.data(), self.value(*a));
                    add_grad(&mut slots, *b, g.data(), self.value(*b));
                }
                Op::Sub(a, b) => {
                    add_grad(&mut slots, *a, g.data(), self.value(*a));
                    let neg: Vec<f64> = g.data().iter().map(|x| -x).collect();
                    add_grad(&mut slots, *b, &neg, self.value(*b));
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(g, y)| g * y)
                        .collect();
                    let db: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, x)| g * x)
                        .collect();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                    add_grad(&mut slots, *b, &db, self.value(*b));
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = g.data().iter().map(|g| g * c).collect();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                }
                Op::Neg(a) => {
                    let da: Vec<f64> = g.data().iter().map(|g| -g).collect();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                    let n = self.value(*b).cols();
                    // dA = g . B^T ; dB = A^T . g
                    let bt = transpose(self.value(*b).data(), k, n);
                    let da = matmul_raw(g.data(), &bt, m, n, k);
                    let at = transpose(self.value(*a).data(), m, k);
                    let db = matmul_raw(&at, g.data(), k, m, n);
                    add_grad(&mut slots, *a, &da, self.value(*a));
                    add_grad(&mut slots, *b, &db, self.value(*b));
                }
                Op::MatVec(mv, vv) => {
                    let (r, c) = (self.value(*mv).rows(), self.value(*mv).cols());
                    let vd = self.value(*vv).data();
                    let md = self.value(*mv).data();
                    // dM = g (outer) v ; dv = M^T . g
                    let mut dm = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dm[i * c + j] = g.data()[i] * vd[j];
                        }
                    }
                    let mut dv = vec![0.0; c];
                    for i in 0..r {
                        let gi = g.data()[i];
                        for j in 0..c {
                            dv[j] += md[i * c + j] * gi;
                        }
                    }
                    add_grad(&mut slots, *mv, &dm, self.value(*mv));
                    add_grad(&mut slots, *vv, &dv, self.value(*vv));
                }
                Op::Dot(a, b) => {
                    let s = g.item();
                    let da: Vec<f64> = self.value(*b).data().iter().map(|y| s * y).collect();
                    let db: Vec<f64> = self.value(*a).data().iter().map(|x| s * x).collect();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                    add_grad(&mut slots, *b, &db, self.value(*b));
                }
                Op::ScalarMul(s, v) => {
                    let sv = self.value(*s).item();
                    let ds = dot_slices(g.data(), self.value(*v).data());
                    let dv: Vec<f64> = g.data().iter().map(|g| g * sv).collect();
                    add_grad(&mut slots, *s, &[ds], self.value(*s));
                    add_grad(&mut slots, *v, &dv, self.value(*v));
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[idx].value.data();
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                }
                Op::Tanh(a) => {
                    let y = self.nodes[idx].value.data();
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                }
                Op::LogSigmoid(a) => {
                    // d/dx log sigmoid(x) = sigmoid(-x)
                    let x = self.value(*a).data();
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x)
                        .map(|(g, x)| g * sigmoid(-x))
                        .collect();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                }
                Op::Softmax(a) => {
                    let y = self.nodes[idx].value.data();
                    let inner = dot_slices(g.data(), y);
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(g, y)| y * (g - inner))
                        .collect();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                }
                Op::Sum(a) => {
                    let s = g.item();
                    let da = vec![s; self.value(*a).numel()];
                    add_grad(&mut slots, *a, &da, self.value(*a));
                }
                Op::Concat(a, b) => {
                    let na = self.value(*a).numel();
                    add_grad(&mut slots, *a, &g.data()[..na], self.value(*a));
                    add_grad(&mut slots, *b, &g.data()[na..], self.value(*b));
                }
                Op::Stack(parts) => {
                    for (k, &p) in parts.iter().enumerate() {
                        add_grad(&mut slots, p, &[g.data()[k]], self.value(p));
                    }
                }
                Op::Index(a, i) => {
                    let mut da = vec![0.0; self.value(*a).numel()];
                    da[*i] = g.item();
                    add_grad(&mut slots, *a, &da, self.value(*a));
                }
            }
        }
        Ok(Gradients { slots })
    }
}

fn add_grad(slots: &mut [Option<Tensor>], v: Var, delta: &[f64], value: &Tensor) {
    match &mut slots[v.0] {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => {
            let mut t = Tensor::zeros_like(value);
            t.data_mut().copy_from_slice(delta);
            slots[v.0] = Some(t);
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros_like(t);
    for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
        *o = f(x);
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros_like(a);
    for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *o = f(x, y);
    }
    out
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}
