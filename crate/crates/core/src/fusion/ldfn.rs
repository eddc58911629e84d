//! Low-dimensional fusion of the four auxiliary streams.

use super::common::{attention, Conv, Dense};
use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamLayout, Session, Var};

/// Channel extents of the aligned auxiliary streams, in input order.
pub const LDFN_INPUT_DIMS: [usize; 4] = [256, 256, 512, 512];

/// Cross-dense attention, gated distillation and multi-scale convolution
/// for one pair of same-width streams.
#[derive(Clone, Debug)]
pub struct PairFusion {
    pub d: usize,
    proj1: Dense,
    proj2: Dense,
    wq1: Dense,
    wq2: Dense,
    wk: Dense,
    wv: Dense,
    tail: Option<PairTail>,
}

/// Distillation gate, multi-scale convolutions and adaptive mix; absent in
/// the reduced variant, which averages the two attention directions.
#[derive(Clone, Debug)]
struct PairTail {
    gate: Dense,
    convs: Vec<Conv>,
    concat: Dense,
    mix: [ParamId; 3],
}

#[derive(Clone, Debug)]
pub struct PairTrace {
    pub p1: Var,
    pub p2: Var,
    pub attn1: Var,
    pub attn2: Var,
    pub gate: Option<Var>,
    pub distilled: Option<Var>,
    pub multi_scale: Option<Var>,
    pub out: Var,
}

impl PairFusion {
    fn new(layout: &mut ParamLayout, prefix: &str, d_in: usize, d: usize, kind: LdfnKind) -> Self {
        let p = |n: &str| format!("{prefix}.{n}");
        PairFusion {
            d,
            proj1: Dense::new(layout, &p("proj1"), d_in, d, true),
            proj2: Dense::new(layout, &p("proj2"), d_in, d, true),
            wq1: Dense::new(layout, &p("wq1"), d, d, false),
            wq2: Dense::new(layout, &p("wq2"), d, d, false),
            wk: Dense::new(layout, &p("wk"), d, d, false),
            wv: Dense::new(layout, &p("wv"), d, d, false),
            tail: (kind == LdfnKind::Full).then(|| PairTail {
                gate: Dense::new(layout, &p("w_g"), 2 * d, d, true),
                convs: [3, 5, 7]
                    .iter()
                    .map(|&k| Conv::new(layout, &p(&format!("conv{k}")), k, d, d, 1))
                    .collect(),
                concat: Dense::new(layout, &p("w_c"), 3 * d, d, true),
                mix: [0, 1, 2].map(|i| layout.add(p(&format!("mix{i}")), &[d], Init::Const(1.0 / 3.0))),
            }),
        }
    }

    pub fn trace(&self, s: &mut Session, x1: Var, x2: Var) -> Result<PairTrace> {
        let p1 = self.proj1.forward(s, x1)?;
        let p2 = self.proj2.forward(s, x2)?;
        let q1 = self.wq1.forward(s, p1)?;
        let q2 = self.wq2.forward(s, p2)?;
        // Shared key/value projections, each applied to the opposite stream.
        let (k2, v2) = (self.wk.forward(s, p2)?, self.wv.forward(s, p2)?);
        let (k1, v1) = (self.wk.forward(s, p1)?, self.wv.forward(s, p1)?);
        let (attn1, _) = attention(s, q1, k2, v2)?;
        let (attn2, _) = attention(s, q2, k1, v1)?;

        let Some(tail) = &self.tail else {
            let sum = s.add(attn1, attn2)?;
            let out = s.scale(sum, 0.5)?;
            return Ok(PairTrace {
                p1,
                p2,
                attn1,
                attn2,
                gate: None,
                distilled: None,
                multi_scale: None,
                out,
            });
        };
        let both = s.concat(&[attn1, attn2], 2)?;
        let gl = tail.gate.forward(s, both)?;
        let gate = s.sigmoid(gl)?;
        let distilled = s.gate_blend(gate, attn1, attn2)?;

        let convs: Vec<Var> = tail
            .convs
            .iter()
            .map(|c| c.forward(s, distilled))
            .collect::<Result<_>>()?;
        let stacked = s.concat(&convs, 2)?;
        let multi_scale = tail.concat.forward(s, stacked)?;

        let sum = s.add(p1, p2)?;
        let mut out = None;
        for (&m, x) in tail.mix.iter().zip([distilled, multi_scale, sum]) {
            let m = s.p(m);
            let t = s.mul(x, m)?;
            out = Some(match out {
                None => t,
                Some(acc) => s.add(acc, t)?,
            });
        }
        Ok(PairTrace {
            p1,
            p2,
            attn1,
            attn2,
            gate: Some(gate),
            distilled: Some(distilled),
            multi_scale: Some(multi_scale),
            out: out.unwrap(),
        })
    }
}

/// Which LDFN body to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdfnKind {
    Full,
    /// Bare cross-dense attention per pair; used by the reduced variant.
    Mini,
}

#[derive(Clone, Debug)]
pub struct Ldfn {
    pub d_s: usize,
    pub kind: LdfnKind,
    pub pair_a: PairFusion,
    pub pair_b: PairFusion,
    out: Dense,
}

impl Ldfn {
    pub fn new(layout: &mut ParamLayout, prefix: &str, d_s: usize, kind: LdfnKind) -> Self {
        let p = |n: &str| format!("{prefix}.{n}");
        Ldfn {
            d_s,
            kind,
            pair_a: PairFusion::new(layout, &p("pair_a"), LDFN_INPUT_DIMS[0], d_s, kind),
            pair_b: PairFusion::new(layout, &p("pair_b"), LDFN_INPUT_DIMS[2], d_s, kind),
            out: Dense::new(layout, &p("w_o"), 2 * d_s, d_s, true),
        }
    }

    fn check(s: &Session, xs: &[Var; 4]) -> Result<()> {
        let lead = s.shape(xs[0]).to_vec();
        for (i, (&x, &want)) in xs.iter().zip(&LDFN_INPUT_DIMS).enumerate() {
            let sh = s.shape(x);
            if sh.len() != 3 || sh[2] != want || lead.len() != 3 || sh[..2] != lead[..2] {
                return Err(Error::config(format!(
                    "LDFN input {} has shape {:?}; expected [B×L×{}] matching input 1",
                    i + 1,
                    sh,
                    want
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session, e1: Var, e2: Var, e3: Var, e4: Var) -> Result<Var> {
        Self::check(s, &[e1, e2, e3, e4])?;
        let a = self.pair_a.trace(s, e1, e2)?.out;
        let b = self.pair_b.trace(s, e3, e4)?.out;
        let cat = s.concat(&[a, b], 2)?;
        self.out.forward(s, cat)
    }
}
