//! Bidirectional gated cross-attention between the two master embeddings.

use super::common::{attention, weighted_sum, Conv, Dense, LayerNorm};
use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamLayout, Session, Var};

pub const BGCA_KERNELS: [usize; 3] = [3, 5, 7];

/// Block-diagonal projection: one `[d_g×d_g]` matrix per channel group.
#[derive(Clone, Debug)]
struct Grouped {
    groups: Vec<ParamId>,
}

impl Grouped {
    fn new(layout: &mut ParamLayout, path: &str, d_m: usize, g: usize) -> Self {
        let dg = d_m / g;
        Grouped {
            groups: (0..g)
                .map(|i| layout.add(format!("{path}.g{i}"), &[dg, dg], Init::FanIn(dg)))
                .collect(),
        }
    }

    /// Returns the projection of every group separately.
    fn forward(&self, s: &mut Session, x: Var) -> Result<Vec<Var>> {
        let parts = super::common::split_channels(s, x, self.groups.len())?;
        parts
            .into_iter()
            .zip(&self.groups)
            .map(|(p, &w)| {
                let w = s.p(w);
                s.linear(p, w)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Bgca {
    pub d_m: usize,
    pub groups: usize,
    wq1: Grouped,
    wk1: Grouped,
    wv1: Grouped,
    wq2: Grouped,
    wk2: Grouped,
    wv2: Grouped,
    convs: Vec<Conv>,
    scale_gate: Dense,
    fusion_gate: Dense,
    norm: LayerNorm,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct BgcaTrace {
    pub attn1: Var,
    pub attn2: Var,
    /// Attention weights of every group, Attn₁ direction then Attn₂.
    pub attn_weights: Vec<Var>,
    pub convs: Vec<Var>,
    /// `[B×L×3]` scale weights α.
    pub alpha: Var,
    pub conv_fusion: Var,
    /// `[B×L×2]` fusion weights β.
    pub beta: Var,
    /// Gated fusion F before the residual and normalization.
    pub fused: Var,
    pub out: Var,
}

impl Bgca {
    pub fn new(layout: &mut ParamLayout, prefix: &str, d_m: usize, groups: usize) -> Result<Self> {
        if groups == 0 || !d_m.is_multiple_of(groups) {
            return Err(Error::config(format!("BGCA width {d_m} is not divisible by {groups} groups")));
        }
        let p = |n: &str| format!("{prefix}.{n}");
        Ok(Bgca {
            d_m,
            groups,
            wq1: Grouped::new(layout, &p("wq1"), d_m, groups),
            wk1: Grouped::new(layout, &p("wk1"), d_m, groups),
            wv1: Grouped::new(layout, &p("wv1"), d_m, groups),
            wq2: Grouped::new(layout, &p("wq2"), d_m, groups),
            wk2: Grouped::new(layout, &p("wk2"), d_m, groups),
            wv2: Grouped::new(layout, &p("wv2"), d_m, groups),
            convs: BGCA_KERNELS
                .iter()
                .map(|&k| Conv::new(layout, &p(&format!("conv{k}")), k, d_m, d_m, 1))
                .collect(),
            scale_gate: Dense::new(layout, &p("w_g"), 3 * d_m, 3, true),
            fusion_gate: Dense::new(layout, &p("w_f"), 2 * d_m, 2, true),
            norm: LayerNorm::new(layout, &p("ln"), d_m),
        })
    }

    fn check(&self, s: &Session, x: Var) -> Result<()> {
        let sh = s.shape(x);
        if sh.len() != 3 || sh[2] != self.d_m {
            return Err(Error::Dimension {
                op: "bgca",
                lhs: sh.to_vec(),
                rhs: vec![self.d_m],
            });
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session, x1: Var, x2: Var) -> Result<Var> {
        Ok(self.trace(s, x1, x2)?.out)
    }

    pub fn trace(&self, s: &mut Session, x1: Var, x2: Var) -> Result<BgcaTrace> {
        self.check(s, x1)?;
        self.check(s, x2)?;
        if s.shape(x1) != s.shape(x2) {
            return Err(Error::Dimension {
                op: "bgca",
                lhs: s.shape(x1).to_vec(),
                rhs: s.shape(x2).to_vec(),
            });
        }
        let (q1, k1, v1) = (self.wq1.forward(s, x1)?, self.wk1.forward(s, x1)?, self.wv1.forward(s, x1)?);
        let (q2, k2, v2) = (self.wq2.forward(s, x2)?, self.wk2.forward(s, x2)?, self.wv2.forward(s, x2)?);
        let mut weights = Vec::new();
        let mut grouped = |s: &mut Session, q: &[Var], k: &[Var], v: &[Var]| -> Result<Var> {
            let mut outs = Vec::with_capacity(q.len());
            for g in 0..q.len() {
                let (o, a) = attention(s, q[g], k[g], v[g])?;
                weights.push(a);
                outs.push(o);
            }
            s.concat(&outs, 2)
        };
        let attn1 = grouped(s, &q1, &k2, &v2)?;
        let attn2 = grouped(s, &q2, &k1, &v1)?;

        let convs: Vec<Var> = self
            .convs
            .iter()
            .map(|c| c.forward(s, attn1))
            .collect::<Result<_>>()?;
        let stacked = s.concat(&convs, 2)?;
        let a_logits = self.scale_gate.forward(s, stacked)?;
        let alpha = s.softmax_lastdim(a_logits, 1.0)?;
        let conv_fusion = weighted_sum(s, alpha, &convs)?;

        let pair = s.concat(&[conv_fusion, attn2], 2)?;
        let b_logits = self.fusion_gate.forward(s, pair)?;
        let beta = s.softmax_lastdim(b_logits, 1.0)?;
        let fused = weighted_sum(s, beta, &[conv_fusion, attn2])?;

        let res = s.add(fused, x1)?;
        let out = self.norm.forward(s, res)?;
        Ok(BgcaTrace {
            attn1,
            attn2,
            attn_weights: weights,
            convs,
            alpha,
            conv_fusion,
            beta,
            fused,
            out,
        })
    }
}
