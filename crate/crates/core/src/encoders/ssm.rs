//! Simplified selective state-space layer: a diagonal, input-gated linear
//! recurrence evaluated with a single sequential scan.

use crate::error::{Error, Result};
use crate::fusion::Dense;
use crate::tensor::{Init, ParamId, ParamLayout, Session, Var};

#[derive(Clone, Debug)]
pub struct Ssm {
    pub d_m: usize,
    pub n_state: usize,
    pub w_in: Dense,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub w_z: Dense,
    pub w_sel: Dense,
    /// Decay logits: `a = σ(sel·W_a + b_a)`.
    pub w_a: Dense,
    pub w_b: Dense,
    pub w_c: Dense,
    pub w_out: Dense,
}

#[derive(Clone, Debug)]
pub struct SsmTrace {
    pub u: Var,
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub state: Var,
    pub out: Var,
}

impl Ssm {
    pub fn new(layout: &mut ParamLayout, prefix: &str, d_m: usize, n_state: usize) -> Result<Self> {
        if n_state == 0 {
            return Err(Error::config("SSM state size must be positive"));
        }
        let p = |n: &str| format!("{prefix}.{n}");
        let ssm = Ssm {
            d_m,
            n_state,
            w_in: Dense::new(layout, &p("w_in"), d_m, d_m, false),
            conv_w: layout.add(p("conv.w"), &[3, d_m], Init::FanIn(3)),
            conv_b: layout.add(p("conv.b"), &[d_m], Init::Zeros),
            w_z: Dense::new(layout, &p("w_z"), d_m, d_m, false),
            w_sel: Dense::new(layout, &p("w_sel"), d_m, n_state, false),
            w_a: Dense::new(layout, &p("w_a"), n_state, d_m, true),
            w_b: Dense::new(layout, &p("w_b"), n_state, d_m, true),
            w_c: Dense::new(layout, &p("w_c"), n_state, d_m, true),
            w_out: Dense::new(layout, &p("w_out"), d_m, d_m, false),
        };
        Ok(ssm)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        Ok(self.trace(s, x)?.out)
    }

    pub fn trace(&self, s: &mut Session, x: Var) -> Result<SsmTrace> {
        let sh = s.shape(x).to_vec();
        if sh.len() != 3 || sh[2] != self.d_m || sh[1] == 0 {
            return Err(Error::Dimension {
                op: "ssm",
                lhs: sh,
                rhs: vec![self.d_m],
            });
        }
        let xi = self.w_in.forward(s, x)?;
        let (cw, cb) = (s.p(self.conv_w), s.p(self.conv_b));
        let conv = s.depthwise_conv1d(xi, cw)?;
        let conv = s.add(conv, cb)?;
        let u = s.silu(conv)?;
        let z = self.w_z.forward(s, x)?;
        let sel = self.w_sel.forward(s, u)?;
        let al = self.w_a.forward(s, sel)?;
        let a = s.sigmoid(al)?;
        let b = self.w_b.forward(s, sel)?;
        let c = self.w_c.forward(s, sel)?;
        let bu = s.mul(b, u)?;
        let state = s.scan(a, bu)?;
        let hc = s.mul(state, c)?;
        let gate = s.silu(z)?;
        let y = s.mul(hc, gate)?;
        let y = self.w_out.forward(s, y)?;
        let out = s.add(x, y)?;
        Ok(SsmTrace { u, a, b, c, state, out })
    }
}
