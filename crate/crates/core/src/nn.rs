//! Parameter containers shared by the encoders and the model: shape-annotated
//! flat tensors, affine layers and small ReLU MLPs, plus their tape bindings.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Value, Var};

/// Learnable tensor stored as a flat array with its shape (rank 1 or 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_value(&self) -> Value {
        match self.shape.len() {
            1 => Value::Vector(Array1::from(self.data.clone())),
            2 => Value::Matrix(
                Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
                    .expect("tensor shape matches data"),
            ),
            r => panic!("unsupported tensor rank {r}"),
        }
    }

    pub fn from_value(v: &Value) -> Self {
        match v {
            Value::Scalar(x) => Self::vector(vec![*x]),
            Value::Vector(x) => Self::vector(x.to_vec()),
            Value::Matrix(x) => Self::matrix(x.nrows(), x.ncols(), x.iter().copied().collect()),
        }
    }
}

/// Uniform init in `±1/sqrt(fan_in)`.
pub fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::matrix(rows, cols, data)
}

pub fn init_vector(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::vector(data)
}

/// Affine map `y = W x + b` with `W: (out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearParams {
    pub fn init(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Self {
        Self {
            w: init_matrix(rng, out, inp),
            b: init_vector(rng, out, inp),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }
}

/// Feed-forward stack of affine layers with ReLU between them (none after
/// the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<LinearParams>,
}

impl MlpParams {
    /// `dims = [in, hidden..., out]`.
    pub fn init(rng: &mut ChaCha8Rng, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| LinearParams::init(rng, w[1], w[0]))
            .collect();
        Self { layers }
    }

    /// Plain (non-tape) evaluation.
    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        let mut x = Array1::from(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let w = match layer.w.to_value() {
                Value::Matrix(m) => m,
                _ => unreachable!(),
            };
            let b = Array1::from(layer.b.data.clone());
            x = w.dot(&x) + &b;
            if i + 1 < self.layers.len() {
                x.mapv_inplace(|e| e.max(0.0));
            }
        }
        x.to_vec()
    }
}

/// Tape-bound affine layer.
#[derive(Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
}

/// Collects leaves in the order the enclosing parameter struct enumerates
/// its tensors, so gradients can be zipped back positionally.
pub struct Binder<'t> {
    pub tape: &'t mut Tape,
    pub leaves: Vec<Var>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t mut Tape) -> Self {
        Self {
            tape,
            leaves: Vec::new(),
        }
    }

    pub fn tensor(&mut self, t: &Tensor) -> Var {
        let v = self.tape.leaf(t.to_value());
        self.leaves.push(v);
        v
    }

    pub fn linear(&mut self, l: &LinearParams) -> BoundLinear {
        BoundLinear {
            w: self.tensor(&l.w),
            b: self.tensor(&l.b),
        }
    }

    pub fn mlp(&mut self, m: &MlpParams) -> BoundMlp {
        BoundMlp {
            layers: m.layers.iter().map(|l| self.linear(l)).collect(),
        }
    }
}

pub fn linear_forward(tape: &mut Tape, l: &BoundLinear, x: Var) -> Var {
    let wx = tape.matvec(l.w, x);
    tape.add(wx, l.b)
}

pub fn mlp_forward(tape: &mut Tape, m: &BoundMlp, x: Var) -> Var {
    let mut h = x;
    for (i, layer) in m.layers.iter().enumerate() {
        h = linear_forward(tape, layer, h);
        if i + 1 < m.layers.len() {
            h = tape.relu(h);
        }
    }
    h
}
