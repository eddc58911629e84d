//! Late fusion of the master state with the deep pyramid output.

use super::common::{split_channels, weighted_sum, Conv, Dense, LayerNorm};
use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamLayout, Session, Var};

pub const LAYER_SCALE_INIT: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Hdwf {
    pub d_m: usize,
    pub heads: usize,
    channel_w1: Dense,
    channel_w2: Dense,
    proj: Dense,
    spatial_conv: Conv,
    spatial_w: Dense,
    wq: Dense,
    wk: Dense,
    wv: Dense,
    /// Offset α of the dynamic temperature.
    pub tau_offset: ParamId,
    mixer: Dense,
    head_w: Dense,
    pub gamma_blend: ParamId,
    pub beta_blend: ParamId,
    pub layer_scale: ParamId,
    norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct HdwfTrace {
    /// `[B×1×d_m]` channel weights of the master stream.
    pub g_c: Var,
    pub m_tilde: Var,
    pub s_tilde: Var,
    /// `[B×1×1]` dynamic temperature.
    pub tau: Var,
    /// Row-softmax attention of every head, `[B×L×L]`.
    pub attn: Vec<Var>,
    /// `[B×L×H]` head mixing weights.
    pub head_weights: Var,
    pub g_tilde: Var,
    pub out: Var,
}

/// `α + mean over positions of the per-position channel mean of m`, one
/// value per sample: `[B×1×1]`.
pub fn dynamic_temperature(s: &mut Session, m: Var, alpha: Var) -> Result<Var> {
    let per_pos = s.mean_channels(m)?;
    let mean = s.mean_len(per_pos)?;
    s.add(mean, alpha)
}

impl Hdwf {
    pub fn new(layout: &mut ParamLayout, prefix: &str, d_m: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_m.is_multiple_of(heads) {
            return Err(Error::config(format!("HDWF width {d_m} is not divisible by {heads} heads")));
        }
        let p = |n: &str| format!("{prefix}.{n}");
        let r = (d_m / 4).max(1);
        Ok(Hdwf {
            d_m,
            heads,
            channel_w1: Dense::new(layout, &p("w1"), d_m, r, true),
            channel_w2: Dense::new(layout, &p("w2"), r, d_m, true),
            proj: Dense::new(layout, &p("w_p"), d_m, d_m, false),
            spatial_conv: Conv::new(layout, &p("spatial"), 3, d_m, r, 1),
            spatial_w: Dense::new(layout, &p("w_c"), r, 1, true),
            wq: Dense::new(layout, &p("wq"), d_m, d_m, false),
            wk: Dense::new(layout, &p("wk"), d_m, d_m, false),
            wv: Dense::new(layout, &p("wv"), d_m, d_m, false),
            tau_offset: layout.add(p("tau_offset"), &[1], Init::Ones),
            mixer: Dense::new(layout, &p("w_m"), d_m, r, true),
            head_w: Dense::new(layout, &p("w_h"), r, heads, true),
            gamma_blend: layout.add(p("gamma_blend"), &[1], Init::Zeros),
            beta_blend: layout.add(p("beta_blend"), &[1], Init::Zeros),
            layer_scale: layout.add(p("layer_scale"), &[d_m], Init::Const(LAYER_SCALE_INIT)),
            norm: LayerNorm::new(layout, &p("ln"), d_m),
        })
    }

    pub fn forward(&self, s: &mut Session, m: Var, sl: Var) -> Result<Var> {
        Ok(self.trace(s, m, sl)?.out)
    }

    pub fn trace(&self, s: &mut Session, m: Var, sl: Var) -> Result<HdwfTrace> {
        let (sm, ss) = (s.shape(m).to_vec(), s.shape(sl).to_vec());
        if sm.len() != 3 || sm != ss || sm[2] != self.d_m {
            return Err(Error::Dimension {
                op: "hdwf",
                lhs: sm,
                rhs: ss,
            });
        }
        let pooled = s.mean_len(m)?;
        let h = self.channel_w1.forward(s, pooled)?;
        let h = s.gelu(h)?;
        let z = self.channel_w2.forward(s, h)?;
        let g_c = s.sigmoid(z)?;
        let weighted = s.mul(m, g_c)?;
        let m_tilde = self.proj.forward(s, weighted)?;

        let c = self.spatial_conv.forward(s, sl)?;
        let w = self.spatial_w.forward(s, c)?;
        let w = s.sigmoid(w)?;
        let s_tilde = s.mul_col(sl, w)?;

        let q = self.wq.forward(s, m_tilde)?;
        let k = self.wk.forward(s, s_tilde)?;
        let v = self.wv.forward(s, m_tilde)?;
        let alpha = s.p(self.tau_offset);
        let tau = dynamic_temperature(s, m, alpha)?;

        let dh = self.d_m / self.heads;
        let qs = split_channels(s, q, self.heads)?;
        let ks = split_channels(s, k, self.heads)?;
        let mut attn = Vec::with_capacity(self.heads);
        let mut outs = Vec::with_capacity(self.heads);
        for (qh, kh) in qs.into_iter().zip(ks) {
            let logits = s.bmm(qh, kh, true)?;
            let logits = s.mul_col(logits, tau)?;
            let a = s.softmax_lastdim(logits, 1.0 / (dh as f64).sqrt())?;
            outs.push(s.bmm(a, v, false)?);
            attn.push(a);
        }
        let mix = self.mixer.forward(s, m)?;
        let mix = s.gelu(mix)?;
        let hl = self.head_w.forward(s, mix)?;
        let head_weights = s.softmax_lastdim(hl, 1.0)?;
        let g_tilde = weighted_sum(s, head_weights, &outs)?;

        let (eps, gamma, beta) = (s.p(self.layer_scale), s.p(self.gamma_blend), s.p(self.beta_blend));
        let scaled = s.mul(m, eps)?;
        let gg = s.mul_col(g_tilde, gamma)?;
        let bm = s.mul_col(m, beta)?;
        let mut acc = s.add(scaled, g_tilde)?;
        acc = s.add(acc, gg)?;
        acc = s.add(acc, bm)?;
        let out = self.norm.forward(s, acc)?;
        Ok(HdwfTrace {
            g_c,
            m_tilde,
            s_tilde,
            tau,
            attn,
            head_weights,
            g_tilde,
            out,
        })
    }
}
