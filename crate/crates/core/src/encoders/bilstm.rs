//! Bidirectional LSTM with hidden size `d_m/2` per direction.

use crate::error::{Error, Result};
use crate::fusion::Dense;
use crate::tensor::{Init, ParamId, ParamLayout, Session, Var};

/// Weights of one direction. Gates are packed `[i, f, g, o]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    /// One bias per gate; the forget bias starts at 1.
    pub bias: [ParamId; 4],
}

impl LstmCell {
    fn new(layout: &mut ParamLayout, path: &str, d_in: usize, hidden: usize) -> Self {
        let names = ["b_i", "b_f", "b_g", "b_o"];
        LstmCell {
            hidden,
            w_ih: layout.add(format!("{path}.w_ih"), &[d_in, 4 * hidden], Init::FanIn(d_in)),
            w_hh: layout.add(format!("{path}.w_hh"), &[hidden, 4 * hidden], Init::FanIn(hidden)),
            bias: [0, 1, 2, 3].map(|i| {
                let init = if i == 1 { Init::Ones } else { Init::Zeros };
                layout.add(format!("{path}.{}", names[i]), &[hidden], init)
            }),
        }
    }

    /// Hidden states `[B×L×h]` in input order; `reverse` runs right to left.
    fn run(&self, s: &mut Session, x: Var, reverse: bool) -> Result<Var> {
        let sh = s.shape(x).to_vec();
        let (l, h) = (sh[1], self.hidden);
        let w_ih = s.p(self.w_ih);
        let w_hh = s.p(self.w_hh);
        let biases = self.bias.map(|id| s.p(id));
        let bias = s.concat(&biases, 0)?;
        let xw = s.linear(x, w_ih)?;
        let xw = s.add(xw, bias)?;

        let mut hs: Vec<Option<Var>> = vec![None; l];
        let mut state: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
        for t in order {
            let mut pre = s.slice(xw, 1, t, 1)?;
            if let Some((hp, _)) = state {
                let rec = s.linear(hp, w_hh)?;
                pre = s.add(pre, rec)?;
            }
            let i = s.slice(pre, 2, 0, h)?;
            let i = s.sigmoid(i)?;
            let f = s.slice(pre, 2, h, h)?;
            let f = s.sigmoid(f)?;
            let g = s.slice(pre, 2, 2 * h, h)?;
            let g = s.tanh(g)?;
            let o = s.slice(pre, 2, 3 * h, h)?;
            let o = s.sigmoid(o)?;
            let ig = s.mul(i, g)?;
            let c = match state {
                Some((_, cp)) => {
                    let fc = s.mul(f, cp)?;
                    s.add(fc, ig)?
                }
                None => ig,
            };
            let tc = s.tanh(c)?;
            let hn = s.mul(o, tc)?;
            hs[t] = Some(hn);
            state = Some((hn, c));
        }
        let hs: Vec<Var> = hs.into_iter().map(Option::unwrap).collect();
        s.concat(&hs, 1)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub d_m: usize,
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub proj: Dense,
}

impl BiLstm {
    pub fn new(layout: &mut ParamLayout, prefix: &str, d_m: usize) -> Result<Self> {
        if d_m < 2 || !d_m.is_multiple_of(2) {
            return Err(Error::config(format!("BiLSTM width {d_m} must be even")));
        }
        let h = d_m / 2;
        Ok(BiLstm {
            d_m,
            fwd: LstmCell::new(layout, &format!("{prefix}.fwd"), d_m, h),
            bwd: LstmCell::new(layout, &format!("{prefix}.bwd"), d_m, h),
            proj: Dense::new(layout, &format!("{prefix}.proj"), d_m, d_m, true),
        })
    }

    /// Forward and backward hidden streams before concatenation.
    pub fn streams(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let sh = s.shape(x).to_vec();
        if sh.len() != 3 || sh[2] != self.d_m || sh[1] == 0 {
            return Err(Error::Dimension {
                op: "bilstm",
                lhs: sh,
                rhs: vec![self.d_m],
            });
        }
        Ok((self.fwd.run(s, x, false)?, self.bwd.run(s, x, true)?))
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (f, b) = self.streams(s, x)?;
        let cat = s.concat(&[f, b], 2)?;
        self.proj.forward(s, cat)
    }
}
