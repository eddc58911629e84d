//! Hierarchical contrastive loss, supervised classification losses and the
//! schedule that blends them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamLayout, ParamStore, Session, Var};

pub const TEMPERATURE_PATH: &str = "contrast.gamma";
const NORM_TOL: f64 = 1e-6;
const NORM_EPS: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub beta: f64,
    pub gamma_init: f64,
    pub gamma_floor: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            beta: 0.7,
            gamma_init: 0.07,
            gamma_floor: 1e-3,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("contrastive beta must be >= 0, got {}", self.beta)));
        }
        if !(self.gamma_floor > 0.0) || !(self.gamma_init >= self.gamma_floor) {
            return Err(Error::config(format!(
                "temperature init {} must be at least the floor {} > 0",
                self.gamma_init, self.gamma_floor
            )));
        }
        Ok(())
    }

    /// Registers the shared learnable temperature Γ.
    pub fn register(&self, layout: &mut ParamLayout) -> ParamId {
        layout.add(TEMPERATURE_PATH, &[1], Init::Const(self.gamma_init))
    }

    /// Raises Γ back to the floor after an optimizer step.
    pub fn clamp(&self, store: &mut ParamStore) {
        if let Some(p) = store.by_path_mut(TEMPERATURE_PATH) {
            for v in p.value.data_mut() {
                *v = v.max(self.gamma_floor);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { gamma: 2.0, alpha: 0.25 }
    }
}

/// The supervised term `L_c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SupervisedLoss {
    Focal {
        #[serde(default = "default_focal_gamma")]
        gamma: f64,
        #[serde(default = "default_focal_alpha")]
        alpha: f64,
    },
    /// Weighted cross-entropy; without an explicit weight the trainer uses
    /// `N_neg / N_pos` of the training split.
    Wce {
        #[serde(default)]
        pos_weight: Option<f64>,
    },
}

fn default_focal_gamma() -> f64 {
    FocalConfig::default().gamma
}
fn default_focal_alpha() -> f64 {
    FocalConfig::default().alpha
}

impl Default for SupervisedLoss {
    fn default() -> Self {
        let f = FocalConfig::default();
        SupervisedLoss::Focal {
            gamma: f.gamma,
            alpha: f.alpha,
        }
    }
}

impl SupervisedLoss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SupervisedLoss::Focal { gamma, alpha } => {
                if !(gamma >= 0.0) || !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::config(format!(
                        "focal loss needs gamma >= 0 and alpha in (0,1], got gamma {gamma}, alpha {alpha}"
                    )));
                }
            }
            SupervisedLoss::Wce { pos_weight: Some(w) } if !(w > 0.0 && w.is_finite()) => {
                return Err(Error::config(format!("pos_weight must be positive, got {w}")));
            }
            SupervisedLoss::Wce { .. } => {}
        }
        Ok(())
    }

    /// `default_pos_weight` is used by WCE when no weight is configured.
    pub fn apply(&self, s: &mut Session, logits: Var, labels: &[f64], default_pos_weight: f64) -> Result<Var> {
        match *self {
            SupervisedLoss::Focal { gamma, alpha } => s.focal_loss(logits, labels, gamma, alpha),
            SupervisedLoss::Wce { pos_weight } => {
                s.weighted_bce(logits, labels, pos_weight.unwrap_or(default_pos_weight))
            }
        }
    }
}

/// `N_neg / N_pos`, or 1 when either class is absent.
pub fn balanced_pos_weight(labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        1.0
    } else {
        neg as f64 / pos as f64
    }
}

/// λ(t) = λ₀·max(0, 1 − t/T).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSchedule {
    pub lambda0: f64,
    /// Decay horizon in epochs; `None` uses the configured epoch count.
    pub horizon: Option<usize>,
}

impl Default for LossSchedule {
    fn default() -> Self {
        LossSchedule {
            lambda0: 0.5,
            horizon: None,
        }
    }
}

impl LossSchedule {
    pub fn lambda(&self, epoch: usize, total_epochs: usize) -> f64 {
        let horizon = self.horizon.unwrap_or(total_epochs);
        if horizon == 0 {
            return 0.0;
        }
        self.lambda0 * (1.0 - epoch as f64 / horizon as f64).max(0.0)
    }
}

/// `L_c + λ·L_cont`; returns `L_c` untouched when λ = 0.
pub fn total_loss(s: &mut Session, l_c: Var, l_cont: Option<Var>, lambda: f64) -> Result<Var> {
    match l_cont {
        Some(c) if lambda != 0.0 => {
            let w = s.scale(c, lambda)?;
            s.add(l_c, w)
        }
        _ => Ok(l_c),
    }
}

/// Brings `z` to `[1×B×D]` and normalizes rows that are not unit length.
fn as_unit_rows(s: &mut Session, z: Var, op: &str) -> Result<Var> {
    let sh = s.shape(z).to_vec();
    let (b, d) = match sh.as_slice() {
        [b, d] | [1, b, d] => (*b, *d),
        _ => return Err(Error::usage(format!("{op}: embeddings must be [B×D], got {sh:?}"))),
    };
    let z = s.reshape(z, &[1, b, d])?;
    let off = s
        .value(z)
        .data()
        .chunks(d)
        .map(|r| (r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    if off > NORM_TOL {
        log::warn!("{op}: embeddings are not unit-norm (max deviation {off:.3e}); normalizing");
        s.l2_normalize(z, NORM_EPS)
    } else {
        Ok(z)
    }
}

fn scaled_similarity(s: &mut Session, a: Var, b: Var, gamma: Var) -> Result<Var> {
    let sim = s.bmm(a, b, true)?;
    let inv = s.recip(gamma)?;
    s.mul_col(sim, inv)
}

/// Supervised contrastive loss over one stage. The anchor is excluded from
/// its own normalizer; anchors without positives are skipped and the
/// remaining terms are averaged.
pub fn intra_layer_loss(s: &mut Session, z: Var, labels: &[u8], gamma: Var) -> Result<Var> {
    let z = as_unit_rows(s, z, "intra_layer_loss")?;
    let b = s.shape(z)[1];
    if b < 2 {
        return Err(Error::usage(format!("intra_layer_loss needs at least 2 samples, got {b}")));
    }
    if labels.len() != b {
        return Err(Error::usage(format!(
            "intra_layer_loss: {} labels for {b} embeddings",
            labels.len()
        )));
    }
    let logits = scaled_similarity(s, z, z, gamma)?;
    let lsm = s.log_softmax_off_diag(logits)?;
    let positives: Vec<usize> = (0..b)
        .map(|i| (0..b).filter(|&j| j != i && labels[j] == labels[i]).count())
        .collect();
    let contributing = positives.iter().filter(|&&p| p > 0).count();
    let mut w = vec![0.0; b * b];
    if contributing > 0 {
        for i in 0..b {
            if positives[i] == 0 {
                continue;
            }
            let c = -1.0 / (positives[i] * contributing) as f64;
            for j in (0..b).filter(|&j| j != i && labels[j] == labels[i]) {
                w[i * b + j] = c;
            }
        }
    }
    s.dot_const(lsm, w)
}

/// InfoNCE between adjacent stages: sample `i` at stage k is matched with
/// sample `i` at stage k+1 against every sample of stage k+1.
pub fn cross_layer_loss(s: &mut Session, zk: Var, zk1: Var, gamma: Var) -> Result<Var> {
    let zk = as_unit_rows(s, zk, "cross_layer_loss")?;
    let zk1 = as_unit_rows(s, zk1, "cross_layer_loss")?;
    let (b, b1) = (s.shape(zk)[1], s.shape(zk1)[1]);
    if b != b1 || s.shape(zk)[2] != s.shape(zk1)[2] {
        return Err(Error::usage(format!(
            "cross_layer_loss: stage shapes differ ({:?} vs {:?})",
            s.shape(zk),
            s.shape(zk1)
        )));
    }
    let logits = scaled_similarity(s, zk, zk1, gamma)?;
    let lsm = s.log_softmax_lastdim(logits)?;
    let mut w = vec![0.0; b * b];
    for i in 0..b {
        w[i * b + i] = -1.0 / b as f64;
    }
    s.dot_const(lsm, w)
}

/// Pools a stage tensor `[B×L×C]` to unit vectors `[1×B×C]`.
pub fn stage_embedding(s: &mut Session, f: Var) -> Result<Var> {
    let sh = s.shape(f).to_vec();
    if sh.len() != 3 {
        return Err(Error::usage(format!("stage features must be [B×L×C], got {sh:?}")));
    }
    let pooled = s.mean_len(f)?;
    let z = s.l2_normalize(pooled, NORM_EPS)?;
    s.reshape(z, &[1, sh[0], sh[2]])
}

#[derive(Clone, Debug)]
pub struct HierarchicalLoss {
    pub intra: [Var; 3],
    pub cross: [Var; 2],
    pub total: Var,
}

/// `(1/3)·Σ L_intra + (β/2)·Σ L_cross` over three stage tensors.
pub fn hierarchical_loss(
    s: &mut Session,
    stages: [Var; 3],
    labels: &[u8],
    gamma: Var,
    beta: f64,
) -> Result<HierarchicalLoss> {
    let z = [
        stage_embedding(s, stages[0])?,
        stage_embedding(s, stages[1])?,
        stage_embedding(s, stages[2])?,
    ];
    let intra = [
        intra_layer_loss(s, z[0], labels, gamma)?,
        intra_layer_loss(s, z[1], labels, gamma)?,
        intra_layer_loss(s, z[2], labels, gamma)?,
    ];
    let cross = [
        cross_layer_loss(s, z[0], z[1], gamma)?,
        cross_layer_loss(s, z[1], z[2], gamma)?,
    ];
    let a = s.add(intra[0], intra[1])?;
    let a = s.add(a, intra[2])?;
    let a = s.scale(a, 1.0 / 3.0)?;
    let c = s.add(cross[0], cross[1])?;
    let c = s.scale(c, beta / 2.0)?;
    let total = s.add(a, c)?;
    Ok(HierarchicalLoss { intra, cross, total })
}
