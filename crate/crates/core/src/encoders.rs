//! Continuous time encoding and temporal path-count encoding.
//!
//! The time encoder maps a timestamp delta to interleaved cosine/sine
//! features over learnable frequencies, scaled so the output always has unit
//! L2 norm. The path-count encoder feeds `log(1 + P)` through a small MLP.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::nn::{mlp_forward, BoundMlp, MlpParams, Tensor};

/// Learnable frequencies of the time encoder; output dimension is `2 * d_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoderParams {
    pub omega: Tensor,
}

impl TimeEncoderParams {
    /// Geometric frequency ladder `omega_i = 10^(-4 (i-1) / d_t)`, covering
    /// timescales from 1 to 1e4 before any learning.
    pub fn geometric(d_t: usize) -> Self {
        assert!(d_t >= 1);
        let data = (0..d_t)
            .map(|i| 10f64.powf(-4.0 * i as f64 / d_t as f64))
            .collect();
        Self {
            omega: Tensor::vector(data),
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }
}

/// `sqrt(1/d_t) * [cos(w_1 t), sin(w_1 t), ..., cos(w_d t), sin(w_d t)]`.
pub fn encode_time(params: &TimeEncoderParams, t: f64) -> Vec<f64> {
    assert!(t.is_finite());
    let d_t = params.dim();
    let scale = (1.0 / d_t as f64).sqrt();
    let mut out = Vec::with_capacity(2 * d_t);
    for &w in &params.omega.data {
        out.push(scale * (w * t).cos());
        out.push(scale * (w * t).sin());
    }
    out
}

/// Tape version of [`encode_time`]; `omega` is a bound parameter leaf.
pub fn encode_time_var(tape: &mut Tape, omega: Var, d_t: usize, t: f64) -> Var {
    let wt = tape.scale(omega, t);
    let c = tape.cos(wt);
    let s = tape.sin(wt);
    let il = tape.interleave(c, s);
    tape.scale(il, (1.0 / d_t as f64).sqrt())
}

/// MLP over the log-compressed path count; one hidden ReLU layer of the
/// output width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEncoderParams {
    pub mlp: MlpParams,
}

impl PathEncoderParams {
    pub fn init(rng: &mut rand_chacha::ChaCha8Rng, d_p: usize) -> Self {
        Self {
            mlp: MlpParams::init(rng, &[1, d_p, d_p]),
        }
    }

    pub fn dim(&self) -> usize {
        self.mlp.layers.last().unwrap().out_dim()
    }
}

/// `MLP(log(1 + p))`; `p` is a non-negative count (fractional values are
/// accepted and passed through the same transform).
pub fn encode_path_count(params: &PathEncoderParams, p: f64) -> Vec<f64> {
    assert!(p >= 0.0);
    params.mlp.eval(&[(1.0 + p).ln()])
}

/// Tape version of [`encode_path_count`].
pub fn encode_path_count_var(tape: &mut Tape, mlp: &BoundMlp, p: f64) -> Var {
    let x = tape.vector(Array1::from(vec![(1.0 + p).ln()]));
    mlp_forward(tape, mlp, x)
}
