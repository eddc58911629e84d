//! Mid-stage fusion of the master state with a pyramid stage output.

use super::common::{attention, Conv, Dense, LayerNorm};
use crate::error::{Error, Result};
use crate::tensor::{ParamLayout, Session, Var};

/// Taps of the generated depthwise kernel.
pub const DYNAMIC_KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub struct Bhgfn {
    pub d_m: usize,
    pub d_s: usize,
    /// Lifts the slave stream to `d_m` when the widths differ.
    pub lift: Option<Dense>,
    wq1: Dense,
    wq2: Dense,
    wk: Dense,
    wv: Dense,
    pub attn_gate: Dense,
    pub kernel_gen: Dense,
    pub channel_gate: Dense,
    pub spatial_gate: Conv,
    norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct BhgfnTrace {
    pub a1: Var,
    pub a2: Var,
    pub g_alpha: Var,
    pub f_alpha: Var,
    /// Per-sample depthwise kernel `[B×d_m×k]`.
    pub kernel: Var,
    pub f_c: Var,
    pub g_c: Var,
    pub f_gc: Var,
    /// `[B×L×1]` position gate.
    pub g_s: Var,
    pub f_gs: Var,
    pub out: Var,
}

impl Bhgfn {
    pub fn new(layout: &mut ParamLayout, prefix: &str, d_m: usize, d_s: usize) -> Self {
        let p = |n: &str| format!("{prefix}.{n}");
        Bhgfn {
            d_m,
            d_s,
            lift: (d_s != d_m).then(|| Dense::new(layout, &p("lift"), d_s, d_m, true)),
            wq1: Dense::new(layout, &p("wq1"), d_m, d_m, false),
            wq2: Dense::new(layout, &p("wq2"), d_m, d_m, false),
            wk: Dense::new(layout, &p("wk"), d_m, d_m, false),
            wv: Dense::new(layout, &p("wv"), d_m, d_m, false),
            attn_gate: Dense::new(layout, &p("w_g"), 2 * d_m, d_m, true),
            kernel_gen: Dense::new(layout, &p("phi"), d_m, d_m * DYNAMIC_KERNEL, true),
            channel_gate: Dense::new(layout, &p("f_c"), d_m, d_m, true),
            spatial_gate: Conv::new(layout, &p("spatial"), 3, d_m, 1, 1),
            norm: LayerNorm::new(layout, &p("ln"), d_m),
        }
    }

    pub fn forward(&self, s: &mut Session, h1: Var, h2: Var) -> Result<Var> {
        Ok(self.trace(s, h1, h2)?.out)
    }

    pub fn trace(&self, s: &mut Session, h1: Var, h2: Var) -> Result<BhgfnTrace> {
        let (s1, s2) = (s.shape(h1).to_vec(), s.shape(h2).to_vec());
        if s1.len() != 3 || s2.len() != 3 || s1[..2] != s2[..2] || s1[2] != self.d_m || s2[2] != self.d_s {
            return Err(Error::Dimension {
                op: "bhgfn",
                lhs: s1,
                rhs: s2,
            });
        }
        let h2 = match &self.lift {
            Some(l) => l.forward(s, h2)?,
            None => h2,
        };
        let q1 = self.wq1.forward(s, h1)?;
        let k2 = self.wk.forward(s, h2)?;
        let v2 = self.wv.forward(s, h2)?;
        let (a1, _) = attention(s, q1, k2, v2)?;
        // The reverse direction attends over the raw master state.
        let q2 = self.wq2.forward(s, h2)?;
        let (a2, _) = attention(s, q2, h1, h1)?;

        let both = s.concat(&[a1, a2], 2)?;
        let g = self.attn_gate.forward(s, both)?;
        let g_alpha = s.sigmoid(g)?;
        let f_alpha = s.gate_blend(g_alpha, a1, a2)?;

        let b = s1[0];
        let pooled = s.mean_len(h1)?;
        let raw = self.kernel_gen.forward(s, pooled)?;
        let raw = s.reshape(raw, &[b, self.d_m, DYNAMIC_KERNEL])?;
        let kernel = s.softmax_lastdim(raw, 1.0)?;
        let f_c = s.dynamic_depthwise_conv1d(f_alpha, kernel)?;

        let gc = self.channel_gate.forward(s, h1)?;
        let g_c = s.sigmoid(gc)?;
        let f_gc = s.mul(g_c, f_c)?;
        let gs = self.spatial_gate.forward(s, f_gc)?;
        let g_s = s.sigmoid(gs)?;
        let f_gs = s.mul_col(f_gc, g_s)?;

        let res = s.add(f_gs, h1)?;
        let out = self.norm.forward(s, res)?;
        Ok(BhgfnTrace {
            a1,
            a2,
            g_alpha,
            f_alpha,
            kernel,
            f_c,
            g_c,
            f_gc,
            g_s,
            f_gs,
            out,
        })
    }
}
