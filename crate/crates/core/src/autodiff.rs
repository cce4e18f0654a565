//! Minimal reverse-mode differentiation tape over scalars, vectors and
//! matrices. Values are computed eagerly at node creation; `backward` walks
//! the tape once in reverse and accumulates gradients for every node.
//!
//! The tape also tracks how close any ReLU/abs input came to its kink so
//! finite-difference probes can reject non-differentiable neighborhoods.

use ndarray::{Array1, Array2};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Runtime value of a node.
#[derive(Debug, Clone)]
pub enum Value {
    Scalar(f64),
    Vector(Array1<f64>),
    Matrix(Array2<f64>),
}

impl Value {
    pub fn scalar(&self) -> f64 {
        match self {
            Value::Scalar(x) => *x,
            other => panic!("expected scalar, got {}", other.kind()),
        }
    }

    pub fn vector(&self) -> &Array1<f64> {
        match self {
            Value::Vector(x) => x,
            other => panic!("expected vector, got {}", other.kind()),
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        match self {
            Value::Matrix(x) => x,
            other => panic!("expected matrix, got {}", other.kind()),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Value::Scalar(_) => "scalar",
            Value::Vector(_) => "vector",
            Value::Matrix(_) => "matrix",
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Scalar(_) => Value::Scalar(0.0),
            Value::Vector(x) => Value::Vector(Array1::zeros(x.len())),
            Value::Matrix(x) => Value::Matrix(Array2::zeros(x.dim())),
        }
    }

    fn add_assign(&mut self, other: &Value) {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => *a += b,
            (Value::Vector(a), Value::Vector(b)) => *a += b,
            (Value::Matrix(a), Value::Matrix(b)) => *a += b,
            _ => panic!("gradient shape mismatch"),
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    WeightedSum(Vec<Var>, Vec<f64>),
    Dot(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    MatMul(Var, Var),
    StackRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceVec(Var, usize, usize),
    Concat(Vec<Var>),
    StackScalars(Vec<Var>),
    Relu(Var),
    Abs(Var),
    Cos(Var),
    Sin(Var),
    Softmax(Var),
    LogSumExp(Var),
    SumVec(Var),
    Interleave(Var, Var),
}

struct Node {
    value: Value,
    op: Op,
}

/// Reverse-mode tape. One tape per forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    kink_min_abs: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kink_min_abs: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest |input| seen at any ReLU/abs node on this tape.
    pub fn kink_min_abs(&self) -> f64 {
        self.kink_min_abs
    }

    pub fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Value, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Value) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Value::Scalar(x))
    }

    pub fn vector(&mut self, x: Array1<f64>) -> Var {
        self.leaf(Value::Vector(x))
    }

    pub fn matrix(&mut self, x: Array2<f64>) -> Var {
        self.leaf(Value::Matrix(x))
    }

    pub fn zeros(&mut self, dim: usize) -> Var {
        self.vector(Array1::zeros(dim))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = match (self.value(a), self.value(b)) {
            (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x + y),
            (Value::Vector(x), Value::Vector(y)) => Value::Vector(x + y),
            (Value::Matrix(x), Value::Matrix(y)) => Value::Matrix(x + y),
            _ => panic!("add shape mismatch"),
        };
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = match (self.value(a), self.value(b)) {
            (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x - y),
            (Value::Vector(x), Value::Vector(y)) => Value::Vector(x - y),
            (Value::Matrix(x), Value::Matrix(y)) => Value::Matrix(x - y),
            _ => panic!("sub shape mismatch"),
        };
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = match self.value(a) {
            Value::Scalar(x) => Value::Scalar(x * c),
            Value::Vector(x) => Value::Vector(x * c),
            Value::Matrix(x) => Value::Matrix(x * c),
        };
        self.push(value, Op::Scale(a, c))
    }

    /// `sum_i coeffs[i] * parts[i]` over same-shape values.
    pub fn weighted_sum(&mut self, parts: &[Var], coeffs: &[f64]) -> Var {
        assert_eq!(parts.len(), coeffs.len());
        assert!(!parts.is_empty());
        let mut acc = self.value(parts[0]).zeros_like();
        for (&p, &c) in parts.iter().zip(coeffs) {
            match (&mut acc, self.value(p)) {
                (Value::Scalar(a), Value::Scalar(x)) => *a += c * x,
                (Value::Vector(a), Value::Vector(x)) => a.scaled_add(c, x),
                (Value::Matrix(a), Value::Matrix(x)) => a.scaled_add(c, x),
                _ => panic!("weighted_sum shape mismatch"),
            }
        }
        self.push(acc, Op::WeightedSum(parts.to_vec(), coeffs.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let x = self.value(a).vector();
        let y = self.value(b).vector();
        let value = Value::Scalar(x.dot(y));
        self.push(value, Op::Dot(a, b))
    }

    /// `(m, n) x (n) -> (m)`
    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let w = self.value(m).matrix();
        let v = self.value(x).vector();
        let value = Value::Vector(w.dot(v));
        self.push(value, Op::MatVec(m, x))
    }

    /// `(m) x (m, n) -> (n)`
    pub fn vecmat(&mut self, x: Var, m: Var) -> Var {
        let v = self.value(x).vector();
        let w = self.value(m).matrix();
        let value = Value::Vector(v.dot(w));
        self.push(value, Op::VecMat(x, m))
    }

    /// `(m, k) x (k, n) -> (m, n)`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let x = self.value(a).matrix();
        let y = self.value(b).matrix();
        let value = Value::Matrix(x.dot(y));
        self.push(value, Op::MatMul(a, b))
    }

    /// Stack equal-length vectors as matrix rows.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty());
        let dim = self.value(rows[0]).vector().len();
        let mut m = Array2::zeros((rows.len(), dim));
        for (i, &r) in rows.iter().enumerate() {
            m.row_mut(i).assign(self.value(r).vector());
        }
        self.push(Value::Matrix(m), Op::StackRows(rows.to_vec()))
    }

    pub fn slice_cols(&mut self, m: Var, start: usize, end: usize) -> Var {
        let x = self.value(m).matrix();
        let value = Value::Matrix(x.slice(ndarray::s![.., start..end]).to_owned());
        self.push(value, Op::SliceCols(m, start, end))
    }

    pub fn slice_vec(&mut self, v: Var, start: usize, end: usize) -> Var {
        let x = self.value(v).vector();
        let value = Value::Vector(x.slice(ndarray::s![start..end]).to_owned());
        self.push(value, Op::SliceVec(v, start, end))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend(self.value(p).vector().iter().copied());
        }
        self.push(Value::Vector(Array1::from(data)), Op::Concat(parts.to_vec()))
    }

    pub fn stack_scalars(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts.iter().map(|&p| self.value(p).scalar()).collect();
        self.push(
            Value::Vector(Array1::from(data)),
            Op::StackScalars(parts.to_vec()),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = match self.value(a) {
            Value::Scalar(x) => {
                let x = *x;
                self.kink_min_abs = self.kink_min_abs.min(x.abs());
                Value::Scalar(x.max(0.0))
            }
            Value::Vector(x) => {
                let x = x.clone();
                for &e in x.iter() {
                    self.kink_min_abs = self.kink_min_abs.min(e.abs());
                }
                Value::Vector(x.mapv(|e| e.max(0.0)))
            }
            Value::Matrix(x) => {
                let x = x.clone();
                for &e in x.iter() {
                    self.kink_min_abs = self.kink_min_abs.min(e.abs());
                }
                Value::Matrix(x.mapv(|e| e.max(0.0)))
            }
        };
        self.push(value, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = match self.value(a) {
            Value::Scalar(x) => {
                let x = *x;
                self.kink_min_abs = self.kink_min_abs.min(x.abs());
                Value::Scalar(x.abs())
            }
            Value::Vector(x) => {
                let x = x.clone();
                for &e in x.iter() {
                    self.kink_min_abs = self.kink_min_abs.min(e.abs());
                }
                Value::Vector(x.mapv(f64::abs))
            }
            _ => panic!("abs on matrices is not used"),
        };
        self.push(value, Op::Abs(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = Value::Vector(self.value(a).vector().mapv(f64::cos));
        self.push(value, Op::Cos(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = Value::Vector(self.value(a).vector().mapv(f64::sin));
        self.push(value, Op::Sin(a))
    }

    /// Max-shift stabilized softmax of a vector.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a).vector();
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = x.mapv(|v| (v - m).exp());
        let s = e.sum();
        self.push(Value::Vector(e / s), Op::Softmax(a))
    }

    /// Max-shift stabilized `log(sum(exp(x)))`.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let x = self.value(a).vector();
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = x.mapv(|v| (v - m).exp()).sum();
        self.push(Value::Scalar(m + s.ln()), Op::LogSumExp(a))
    }

    pub fn sum_vec(&mut self, a: Var) -> Var {
        let value = Value::Scalar(self.value(a).vector().sum());
        self.push(value, Op::SumVec(a))
    }

    /// `[a_1, b_1, a_2, b_2, ...]` from two equal-length vectors.
    pub fn interleave(&mut self, a: Var, b: Var) -> Var {
        let x = self.value(a).vector();
        let y = self.value(b).vector();
        assert_eq!(x.len(), y.len());
        let mut data = Vec::with_capacity(2 * x.len());
        for i in 0..x.len() {
            data.push(x[i]);
            data.push(y[i]);
        }
        self.push(Value::Vector(Array1::from(data)), Op::Interleave(a, b))
    }

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Value>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Value::Scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, negate(&g));
                }
                Op::Scale(a, c) => {
                    let gs = scale_value(&g, *c);
                    accumulate(&mut grads, *a, gs);
                }
                Op::WeightedSum(parts, coeffs) => {
                    for (&p, &c) in parts.iter().zip(coeffs) {
                        accumulate(&mut grads, p, scale_value(&g, c));
                    }
                }
                Op::Dot(a, b) => {
                    let gs = g.scalar();
                    let xa = self.nodes[a.0].value.vector();
                    let xb = self.nodes[b.0].value.vector();
                    accumulate(&mut grads, *a, Value::Vector(xb * gs));
                    accumulate(&mut grads, *b, Value::Vector(xa * gs));
                }
                Op::MatVec(m, x) => {
                    let gv = g.vector();
                    let w = self.nodes[m.0].value.matrix();
                    let v = self.nodes[x.0].value.vector();
                    let gm = outer(gv, v);
                    let gx = w.t().dot(gv);
                    accumulate(&mut grads, *m, Value::Matrix(gm));
                    accumulate(&mut grads, *x, Value::Vector(gx));
                }
                Op::VecMat(x, m) => {
                    let gv = g.vector();
                    let v = self.nodes[x.0].value.vector();
                    let w = self.nodes[m.0].value.matrix();
                    let gx = w.dot(gv);
                    let gm = outer(v, gv);
                    accumulate(&mut grads, *x, Value::Vector(gx));
                    accumulate(&mut grads, *m, Value::Matrix(gm));
                }
                Op::MatMul(a, b) => {
                    let gm = g.matrix();
                    let xa = self.nodes[a.0].value.matrix();
                    let xb = self.nodes[b.0].value.matrix();
                    accumulate(&mut grads, *a, Value::Matrix(gm.dot(&xb.t())));
                    accumulate(&mut grads, *b, Value::Matrix(xa.t().dot(gm)));
                }
                Op::StackRows(rows) => {
                    let gm = g.matrix();
                    for (r, &var) in rows.iter().enumerate() {
                        accumulate(&mut grads, var, Value::Vector(gm.row(r).to_owned()));
                    }
                }
                Op::SliceCols(m, start, _end) => {
                    let gm = g.matrix();
                    let full = self.nodes[m.0].value.matrix();
                    let mut out = Array2::zeros(full.dim());
                    out.slice_mut(ndarray::s![.., *start..*start + gm.ncols()])
                        .assign(gm);
                    accumulate(&mut grads, *m, Value::Matrix(out));
                }
                Op::SliceVec(v, start, _end) => {
                    let gv = g.vector();
                    let full = self.nodes[v.0].value.vector();
                    let mut out = Array1::zeros(full.len());
                    out.slice_mut(ndarray::s![*start..*start + gv.len()])
                        .assign(gv);
                    accumulate(&mut grads, *v, Value::Vector(out));
                }
                Op::Concat(parts) => {
                    let gv = g.vector();
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.vector().len();
                        let piece = gv.slice(ndarray::s![offset..offset + len]).to_owned();
                        accumulate(&mut grads, p, Value::Vector(piece));
                        offset += len;
                    }
                }
                Op::StackScalars(parts) => {
                    let gv = g.vector();
                    for (k, &p) in parts.iter().enumerate() {
                        accumulate(&mut grads, p, Value::Scalar(gv[k]));
                    }
                }
                Op::Relu(a) => {
                    let gr = match (&g, &self.nodes[a.0].value) {
                        (Value::Scalar(gg), Value::Scalar(x)) => {
                            Value::Scalar(if *x > 0.0 { *gg } else { 0.0 })
                        }
                        (Value::Vector(gg), Value::Vector(x)) => Value::Vector(
                            ndarray::Zip::from(gg)
                                .and(x)
                                .map_collect(|&gg, &x| if x > 0.0 { gg } else { 0.0 }),
                        ),
                        (Value::Matrix(gg), Value::Matrix(x)) => Value::Matrix(
                            ndarray::Zip::from(gg)
                                .and(x)
                                .map_collect(|&gg, &x| if x > 0.0 { gg } else { 0.0 }),
                        ),
                        _ => panic!("relu gradient shape mismatch"),
                    };
                    accumulate(&mut grads, *a, gr);
                }
                Op::Abs(a) => {
                    let gr = match (&g, &self.nodes[a.0].value) {
                        (Value::Scalar(gg), Value::Scalar(x)) => Value::Scalar(gg * sign(*x)),
                        (Value::Vector(gg), Value::Vector(x)) => Value::Vector(
                            ndarray::Zip::from(gg)
                                .and(x)
                                .map_collect(|&gg, &x| gg * sign(x)),
                        ),
                        _ => panic!("abs gradient shape mismatch"),
                    };
                    accumulate(&mut grads, *a, gr);
                }
                Op::Cos(a) => {
                    let gv = g.vector();
                    let x = self.nodes[a.0].value.vector();
                    let gx = ndarray::Zip::from(gv)
                        .and(x)
                        .map_collect(|&gg, &x| -gg * x.sin());
                    accumulate(&mut grads, *a, Value::Vector(gx));
                }
                Op::Sin(a) => {
                    let gv = g.vector();
                    let x = self.nodes[a.0].value.vector();
                    let gx = ndarray::Zip::from(gv)
                        .and(x)
                        .map_collect(|&gg, &x| gg * x.cos());
                    accumulate(&mut grads, *a, Value::Vector(gx));
                }
                Op::Softmax(a) => {
                    let gv = g.vector();
                    let y = self.nodes[i].value.vector();
                    let dot = gv.dot(y);
                    let gx = ndarray::Zip::from(gv)
                        .and(y)
                        .map_collect(|&gg, &yy| yy * (gg - dot));
                    accumulate(&mut grads, *a, Value::Vector(gx));
                }
                Op::LogSumExp(a) => {
                    let gs = g.scalar();
                    let x = self.nodes[a.0].value.vector();
                    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e = x.mapv(|v| (v - m).exp());
                    let s = e.sum();
                    accumulate(&mut grads, *a, Value::Vector(e * (gs / s)));
                }
                Op::SumVec(a) => {
                    let gs = g.scalar();
                    let len = self.nodes[a.0].value.vector().len();
                    accumulate(&mut grads, *a, Value::Vector(Array1::from_elem(len, gs)));
                }
                Op::Interleave(a, b) => {
                    let gv = g.vector();
                    let half = gv.len() / 2;
                    let mut ga = Array1::zeros(half);
                    let mut gb = Array1::zeros(half);
                    for k in 0..half {
                        ga[k] = gv[2 * k];
                        gb[k] = gv[2 * k + 1];
                    }
                    accumulate(&mut grads, *a, Value::Vector(ga));
                    accumulate(&mut grads, *b, Value::Vector(gb));
                }
            }
        }

        Gradients { grads }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn negate(v: &Value) -> Value {
    scale_value(v, -1.0)
}

fn scale_value(v: &Value, c: f64) -> Value {
    match v {
        Value::Scalar(x) => Value::Scalar(x * c),
        Value::Vector(x) => Value::Vector(x * c),
        Value::Matrix(x) => Value::Matrix(x * c),
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            m[(i, j)] = a[i] * b[j];
        }
    }
    m
}

fn accumulate(grads: &mut [Option<Value>], var: Var, g: Value) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Value> {
        self.grads[v.0].as_ref()
    }
}
