//! End-to-end master/slave network.

mod config;

pub use config::{Ablation, EncoderKind, EncoderSlots, ModelConfig, Stage, Variant};

use crate::encoders::{BiLstm, Ssm};
use crate::error::{Error, Result};
use crate::features::{AlignDims, MASTER_A_DIM, MASTER_B_DIM};
use crate::fusion::{Bgca, Bhgfn, Dense, Hdwf, Ldfn, LdfnKind, Macp};
use crate::tensor::{ParamId, ParamLayout, Session, Tensor, Var};

/// Parameter path prefixes of the five fusion blocks.
pub const FUSION_PREFIXES: [&str; 5] = ["bgca.", "ldfn.", "bhgfn1.", "bhgfn2.", "hdwf."];

/// Alignment widths of the auxiliary streams (EMBER2, PseAAC, BLOSUM62,
/// AAindex).
pub const AUX_TARGETS: [usize; 4] = [256, 256, 512, 512];

/// Channel widths of the six input streams under `cfg`, in bundle order.
pub fn input_dims(cfg: &ModelConfig) -> [usize; 6] {
    [
        MASTER_A_DIM,
        MASTER_B_DIM,
        cfg.ember_dim,
        cfg.pseaac.dim(),
        crate::features::BLOSUM_DIM,
        cfg.aaindex_ids.len(),
    ]
}

#[derive(Clone, Debug)]
enum Early {
    Fusion { bgca: Bgca, ldfn: Ldfn },
    Bypass { master: Dense, slave: Dense },
}

#[derive(Clone, Debug)]
enum Mid {
    Fusion(Bhgfn),
    Bypass(Dense),
}

#[derive(Clone, Debug)]
enum Late {
    Fusion(Hdwf),
    Add,
}

#[derive(Clone, Debug)]
enum Encoder {
    Bilstm(BiLstm),
    Ssm(Ssm),
}

impl Encoder {
    fn new(layout: &mut ParamLayout, prefix: &str, kind: EncoderKind, cfg: &ModelConfig) -> Result<Self> {
        match kind {
            EncoderKind::Bilstm => Ok(Encoder::Bilstm(BiLstm::new(layout, prefix, cfg.d_m)?)),
            EncoderKind::Ssm => Ok(Encoder::Ssm(Ssm::new(layout, prefix, cfg.d_m, cfg.n_state)?)),
            other => Err(Error::config(format!("encoder slot {other:?} is not implemented"))),
        }
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        match self {
            Encoder::Bilstm(e) => e.forward(s, x),
            Encoder::Ssm(e) => e.forward(s, x),
        }
    }
}

impl Mid {
    fn new(layout: &mut ParamLayout, idx: usize, cfg: &ModelConfig) -> Self {
        match cfg.ablation.mid {
            Stage::Fusion => Mid::Fusion(Bhgfn::new(layout, &format!("bhgfn{idx}"), cfg.d_m, cfg.d_s)),
            Stage::Bypass => Mid::Bypass(Dense::new(
                layout,
                &format!("bypass.mid{idx}"),
                cfg.d_m + cfg.d_s,
                cfg.d_m,
                true,
            )),
        }
    }

    fn forward(&self, s: &mut Session, h: Var, f: Var) -> Result<Var> {
        match self {
            Mid::Fusion(b) => b.forward(s, h, f),
            Mid::Bypass(d) => {
                let cat = s.concat(&[h, f], 2)?;
                d.forward(s, cat)
            }
        }
    }
}

/// Output of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOut {
    /// `[B]` classification logits.
    pub logits: Var,
    /// Pyramid stage features `F₁, F₂, F₃`, each `[B×L×d_s]`.
    pub stages: [Var; 3],
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub layout: ParamLayout,
    pub temperature: ParamId,
    proj_a: Dense,
    proj_b: Dense,
    align: Vec<AlignDims>,
    early: Early,
    macp: Macp,
    enc: [Encoder; 2],
    mid: [Mid; 2],
    proj_f3: Dense,
    late: Late,
    head1: Dense,
    head2: Dense,
}

impl Model {
    /// Registers every parameter; values are materialized separately with
    /// `ParamStore::from_layout(&model.layout, seed)`.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layout = ParamLayout::new();
        let l = &mut layout;
        let (d_m, d_s) = (cfg.d_m, cfg.d_s);
        let proj_a = Dense::new(l, "proj.master_a", MASTER_A_DIM, d_m, true);
        let proj_b = Dense::new(l, "proj.master_b", MASTER_B_DIM, d_m, true);
        let aux_in = [
            cfg.ember_dim,
            cfg.pseaac.dim(),
            crate::features::BLOSUM_DIM,
            cfg.aaindex_ids.len(),
        ];
        let names = ["ember", "pseaac", "blosum", "aaindex"];
        let align = (0..4)
            .map(|i| AlignDims::register(l, &format!("align.{}", names[i]), aux_in[i], AUX_TARGETS[i]))
            .collect::<Result<Vec<_>>>()?;
        let early = match cfg.ablation.early {
            Stage::Fusion => Early::Fusion {
                bgca: Bgca::new(l, "bgca", d_m, cfg.groups)?,
                ldfn: Ldfn::new(
                    l,
                    "ldfn",
                    d_s,
                    match cfg.variant {
                        Variant::Full => LdfnKind::Full,
                        Variant::Mini => LdfnKind::Mini,
                    },
                ),
            },
            Stage::Bypass => Early::Bypass {
                master: Dense::new(l, "bypass.early_master", 2 * d_m, d_m, true),
                slave: Dense::new(l, "bypass.early_slave", AUX_TARGETS.iter().sum(), d_s, true),
            },
        };
        let macp = Macp::new(l, "macp", d_s, cfg.dilation);
        let enc = [
            Encoder::new(l, "enc1", cfg.encoders.first, cfg)?,
            Encoder::new(l, "enc2", cfg.encoders.second, cfg)?,
        ];
        let mid = [Mid::new(l, 1, cfg), Mid::new(l, 2, cfg)];
        let proj_f3 = Dense::new(l, "proj.f3", d_s, d_m, true);
        let late = match cfg.ablation.late {
            Stage::Fusion => Late::Fusion(Hdwf::new(l, "hdwf", d_m, cfg.heads)?),
            Stage::Bypass => Late::Add,
        };
        let head1 = Dense::new(l, "head.l1", d_m, (d_m / 2).max(1), true);
        let head2 = Dense::new(l, "head.l2", (d_m / 2).max(1), 1, true);
        let temperature = cfg.contrastive.register(l);
        Ok(Model {
            cfg: cfg.clone(),
            layout,
            temperature,
            proj_a,
            proj_b,
            align,
            early,
            macp,
            enc,
            mid,
            proj_f3,
            late,
            head1,
            head2,
        })
    }

    /// Trainable scalar count, optionally restricted to a path prefix.
    pub fn param_count(&self, prefix: Option<&str>) -> usize {
        self.layout.count(prefix)
    }

    /// Trainable scalars inside the BGCA, LDFN, BHGFN and HDWF blocks.
    pub fn fusion_param_count(&self) -> usize {
        FUSION_PREFIXES.iter().map(|p| self.layout.count(Some(p))).sum()
    }

    /// Expected channel widths of the six input streams.
    pub fn input_dims(&self) -> [usize; 6] {
        input_dims(&self.cfg)
    }

    /// `inputs` are the six stacked streams `[B×L×d]` in bundle order.
    pub fn forward(&self, s: &mut Session, inputs: &[Tensor; 6]) -> Result<ForwardOut> {
        let b = inputs[0].shape().first().copied().unwrap_or(0);
        for (t, d) in inputs.iter().zip(self.input_dims()) {
            if t.rank() != 3 || t.shape()[2] != d || t.shape()[..2] != inputs[0].shape()[..2] {
                return Err(Error::Dimension {
                    op: "model_input",
                    lhs: t.shape().to_vec(),
                    rhs: vec![b, inputs[0].shape().get(1).copied().unwrap_or(0), d],
                });
            }
        }
        let v: Vec<Var> = inputs.iter().map(|t| s.input(t.clone())).collect();
        let ma = self.proj_a.forward(s, v[0])?;
        let mb = self.proj_b.forward(s, v[1])?;
        let aux: Vec<Var> = self
            .align
            .iter()
            .zip(&v[2..])
            .map(|(a, &x)| a.forward(s, x))
            .collect::<Result<_>>()?;
        let (f, sl) = match &self.early {
            Early::Fusion { bgca, ldfn } => (
                bgca.forward(s, ma, mb)?,
                ldfn.forward(s, aux[0], aux[1], aux[2], aux[3])?,
            ),
            Early::Bypass { master, slave } => {
                let m = s.concat(&[ma, mb], 2)?;
                let a = s.concat(&aux, 2)?;
                (master.forward(s, m)?, slave.forward(s, a)?)
            }
        };
        let (f1, f2, f3) = self.macp.forward(s, sl)?;
        let h = self.enc[0].forward(s, f)?;
        let h = self.mid[0].forward(s, h, f1)?;
        let h = self.enc[1].forward(s, h)?;
        let h = self.mid[1].forward(s, h, f2)?;
        let deep = self.proj_f3.forward(s, f3)?;
        let o = match &self.late {
            Late::Fusion(hd) => hd.forward(s, h, deep)?,
            Late::Add => s.add(h, deep)?,
        };
        let pooled = s.mean_len(o)?;
        let z = self.head1.forward(s, pooled)?;
        let z = s.gelu(z)?;
        let logit = self.head2.forward(s, z)?;
        let logits = s.reshape(logit, &[b])?;
        Ok(ForwardOut {
            logits,
            stages: [f1, f2, f3],
        })
    }
}
