//! Small parameterized layers shared by the fusion blocks and encoders.

use crate::error::Result;
use crate::tensor::{Init, ParamId, ParamLayout, Session, Var};

/// `x·W (+ b)` over the last axis.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, path: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        Dense {
            w: layout.add(format!("{path}.w"), &[d_in, d_out], Init::FanIn(d_in)),
            b: bias.then(|| layout.add(format!("{path}.b"), &[d_out], Init::Zeros)),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.p(self.w);
        let y = s.linear(x, w)?;
        match self.b {
            Some(b) => {
                let b = s.p(b);
                s.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// "Same" 1-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub dilation: usize,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, path: &str, k: usize, c_in: usize, c_out: usize, dilation: usize) -> Self {
        Conv {
            w: layout.add(format!("{path}.w"), &[k, c_in, c_out], Init::FanIn(k * c_in)),
            b: layout.add(format!("{path}.b"), &[c_out], Init::Zeros),
            dilation,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.p(self.w), s.p(self.b));
        let y = s.conv1d(x, w, self.dilation)?;
        s.add(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, path: &str, d: usize) -> Self {
        LayerNorm {
            gain: layout.add(format!("{path}.gain"), &[d], Init::Ones),
            bias: layout.add(format!("{path}.bias"), &[d], Init::Zeros),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gain), s.p(self.bias));
        s.layer_norm(x, g, b, LN_EPS)
    }
}

/// Scaled dot-product attention `softmax(q·kᵀ·scale)·v` on `[B×L×d]`
/// operands. Returns the output and the attention weights.
pub fn attention(s: &mut Session, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let d = *s.shape(q).last().unwrap();
    let logits = s.bmm(q, k, true)?;
    let a = s.softmax_lastdim(logits, 1.0 / (d as f64).sqrt())?;
    let out = s.bmm(a, v, false)?;
    Ok((out, a))
}

/// Splits the channel axis of `x` into `n` equal consecutive slices.
pub fn split_channels(s: &mut Session, x: Var, n: usize) -> Result<Vec<Var>> {
    let c = *s.shape(x).last().unwrap();
    let w = c / n;
    let axis = s.shape(x).len() - 1;
    (0..n).map(|i| s.slice(x, axis, i * w, w)).collect()
}

/// Per-position softmax weights `[B×L×n]` applied to `n` same-shaped operands.
pub fn weighted_sum(s: &mut Session, weights: Var, xs: &[Var]) -> Result<Var> {
    let cols = split_channels(s, weights, xs.len())?;
    let mut acc = s.mul_col(xs[0], cols[0])?;
    for (x, c) in xs.iter().zip(&cols).skip(1) {
        let t = s.mul_col(*x, *c)?;
        acc = s.add(acc, t)?;
    }
    Ok(acc)
}
