//! Three-stage convolutional pyramid over the fused auxiliary stream.

use super::common::{Conv, Dense};
use crate::error::{Error, Result};
use crate::tensor::{Init, NormAxes, ParamId, ParamLayout, Session, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Squeeze-and-excitation: `x ⊙ σ(W₂·ReLU(W₁·GAP(x)))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub down: Dense,
    pub up: Dense,
}

impl SqueezeExcite {
    pub fn new(layout: &mut ParamLayout, path: &str, d: usize) -> Self {
        let r = (d / 4).max(1);
        SqueezeExcite {
            down: Dense::new(layout, &format!("{path}.w1"), d, r, true),
            up: Dense::new(layout, &format!("{path}.w2"), r, d, true),
        }
    }

    /// The `[B×1×C]` channel weights.
    pub fn weights(&self, s: &mut Session, x: Var) -> Result<Var> {
        let pooled = s.mean_len(x)?;
        let h = self.down.forward(s, pooled)?;
        let h = s.relu(h)?;
        let z = self.up.forward(s, h)?;
        s.sigmoid(z)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = self.weights(s, x)?;
        s.mul(x, w)
    }
}

/// Batch norm over batch and length. Training normalizes with the batch
/// statistics and queues running-statistic updates; evaluation uses the
/// running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(layout: &mut ParamLayout, path: &str, d: usize) -> Self {
        BatchNorm {
            gain: layout.add(format!("{path}.gain"), &[d], Init::Ones),
            bias: layout.add(format!("{path}.bias"), &[d], Init::Zeros),
            running_mean: layout.add_buffer(format!("{path}.running_mean"), &[d], Init::Zeros),
            running_var: layout.add_buffer(format!("{path}.running_var"), &[d], Init::Ones),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let c = *s.shape(x).last().unwrap();
        let normed = if s.training() {
            let rows = s.value(x).data().chunks(c);
            let n = rows.len() as f64;
            let mut mean = vec![0.0; c];
            for row in s.value(x).data().chunks(c) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
            }
            let mut var = vec![0.0; c];
            for row in s.value(x).data().chunks(c) {
                var.iter_mut().zip(row).zip(&mean).for_each(|((a, v), m)| *a += (v - m).powi(2));
            }
            // Running variance tracks the unbiased estimate.
            let denom = (n - 1.0).max(1.0);
            let rm = s.store().get(self.running_mean).value.data();
            let rv = s.store().get(self.running_var).value.data();
            let new_mean = rm.iter().zip(&mean).map(|(r, m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m).collect();
            let new_var = rv
                .iter()
                .zip(&var)
                .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v / denom)
                .collect();
            s.update_buffer(self.running_mean, new_mean);
            s.update_buffer(self.running_var, new_var);
            s.standardize(x, NormAxes::BatchLength, BN_EPS)?
        } else {
            let rm = s.store().get(self.running_mean).value.data();
            let rv = s.store().get(self.running_var).value.data();
            let inv: Vec<f64> = rv.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let shift: Vec<f64> = rm.iter().zip(&inv).map(|(m, i)| -m * i).collect();
            let inv = s.input(Tensor::new(vec![c], inv)?);
            let shift = s.input(Tensor::new(vec![c], shift)?);
            let y = s.mul(x, inv)?;
            s.add(y, shift)?
        };
        let (g, b) = (s.p(self.gain), s.p(self.bias));
        let y = s.mul(normed, g)?;
        s.add(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Macp {
    pub d_s: usize,
    pub dilation: usize,
    pub scale_gate: Dense,
    conv3: Conv,
    conv5: Conv,
    pub channel: SqueezeExcite,
    dilated: Conv,
    pub bn: BatchNorm,
    pub se: SqueezeExcite,
    pub skip: Dense,
    deep: Vec<Conv>,
    pub coord_channel: SqueezeExcite,
    pub coord_spatial: Conv,
}

#[derive(Clone, Debug)]
pub struct MacpTrace {
    /// `[B×1×C]` scale gate between the k=3 and k=5 paths.
    pub alpha: Var,
    pub conv3: Var,
    pub conv5: Var,
    /// Convex blend before channel attention.
    pub blend: Var,
    pub f1: Var,
    /// `GELU(dilated conv)`, the batch-norm input.
    pub bn_input: Var,
    pub f_main: Var,
    pub f2: Var,
    pub f_c: Var,
    /// `[B×1×C]` channel weights of the coordinate attention.
    pub a_c: Var,
    /// `[B×L×1]` position weights of the coordinate attention.
    pub a_s: Var,
    pub f3: Var,
}

impl Macp {
    pub fn new(layout: &mut ParamLayout, prefix: &str, d_s: usize, dilation: usize) -> Self {
        let p = |n: &str| format!("{prefix}.{n}");
        Macp {
            d_s,
            dilation,
            scale_gate: Dense::new(layout, &p("w_s"), d_s, d_s, true),
            conv3: Conv::new(layout, &p("conv3"), 3, d_s, d_s, 1),
            conv5: Conv::new(layout, &p("conv5"), 5, d_s, d_s, 1),
            channel: SqueezeExcite::new(layout, &p("channel"), d_s),
            dilated: Conv::new(layout, &p("dilated"), 3, d_s, d_s, dilation),
            bn: BatchNorm::new(layout, &p("bn"), d_s),
            se: SqueezeExcite::new(layout, &p("se"), d_s),
            skip: Dense::new(layout, &p("skip"), d_s, d_s, true),
            deep: [3, 5, 7]
                .iter()
                .map(|&k| Conv::new(layout, &p(&format!("deep{k}")), k, d_s, d_s, 1))
                .collect(),
            coord_channel: SqueezeExcite::new(layout, &p("coord"), d_s),
            coord_spatial: Conv::new(layout, &p("coord_spatial"), 3, d_s, 1, 1),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<(Var, Var, Var)> {
        let t = self.trace(s, x)?;
        Ok((t.f1, t.f2, t.f3))
    }

    pub fn trace(&self, s: &mut Session, x: Var) -> Result<MacpTrace> {
        let sh = s.shape(x).to_vec();
        if sh.len() != 3 || sh[2] != self.d_s {
            return Err(Error::Dimension {
                op: "macp",
                lhs: sh,
                rhs: vec![self.d_s],
            });
        }
        let pooled = s.mean_len(x)?;
        let a = self.scale_gate.forward(s, pooled)?;
        let alpha = s.sigmoid(a)?;
        let c3 = self.conv3.forward(s, x)?;
        let c5 = self.conv5.forward(s, x)?;
        let blend = s.gate_blend(alpha, c3, c5)?;
        let f1 = self.channel.forward(s, blend)?;

        let d = self.dilated.forward(s, f1)?;
        let d = s.gelu(d)?;
        let f_main = self.bn.forward(s, d)?;
        let se = self.se.forward(s, f_main)?;
        let skip = self.skip.forward(s, f1)?;
        let f2 = s.add(se, skip)?;

        let mut f_c = self.deep[0].forward(s, f2)?;
        for conv in &self.deep[1..] {
            let c = conv.forward(s, f2)?;
            f_c = s.add(f_c, c)?;
        }
        let a_c = self.coord_channel.weights(s, f_c)?;
        let sp = self.coord_spatial.forward(s, f_c)?;
        let a_s = s.sigmoid(sp)?;
        let f3 = s.mul(f2, a_c)?;
        let f3 = s.mul_col(f3, a_s)?;
        Ok(MacpTrace {
            alpha,
            conv3: c3,
            conv5: c5,
            blend,
            f1,
            bn_input: d,
            f_main,
            f2,
            f_c,
            a_c,
            a_s,
            f3,
        })
    }
}
