use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{aaindex_ids, PseAacConfig, AAINDEX_COUNT};
use crate::losses::{ContrastiveConfig, LossSchedule, SupervisedLoss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Mini,
}

/// Whether a fusion stage runs its dedicated blocks or the plain
/// concatenation/addition stand-in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fusion,
    Bypass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub early: Stage,
    pub mid: Stage,
    pub late: Stage,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            early: Stage::Fusion,
            mid: Stage::Fusion,
            late: Stage::Fusion,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Bilstm,
    Ssm,
    /// Accepted by the schema for comparison grids, rejected by validation.
    Transformer,
    Resnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSlots {
    pub first: EncoderKind,
    pub second: EncoderKind,
}

impl Default for EncoderSlots {
    fn default() -> Self {
        EncoderSlots {
            first: EncoderKind::Bilstm,
            second: EncoderKind::Ssm,
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_m: usize,
    pub d_s: usize,
    pub window: usize,
    pub groups: usize,
    pub heads: usize,
    pub dilation: usize,
    pub ember_dim: usize,
    pub pseaac: PseAacConfig,
    pub aaindex_ids: Vec<String>,
    pub n_state: usize,
    pub ablation: Ablation,
    pub encoders: EncoderSlots,
    pub loss: SupervisedLoss,
    pub contrastive: ContrastiveConfig,
    pub schedule: LossSchedule,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Patience in epochs on validation MCC; `None` trains every epoch.
    pub early_stopping: Option<usize>,
    pub val_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::full()
    }
}

impl ModelConfig {
    pub fn full() -> Self {
        ModelConfig {
            variant: Variant::Full,
            d_m: 512,
            d_s: 256,
            window: 33,
            groups: 4,
            heads: 4,
            dilation: 2,
            ember_dim: 64,
            pseaac: PseAacConfig::default(),
            aaindex_ids: aaindex_ids(),
            n_state: 16,
            ablation: Ablation::default(),
            encoders: EncoderSlots::default(),
            loss: SupervisedLoss::default(),
            contrastive: ContrastiveConfig::default(),
            schedule: LossSchedule::default(),
            seed: 0,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            early_stopping: None,
            val_fraction: 0.1,
        }
    }

    /// Reduced variant: LDFN cut to its cross-dense attention, halved
    /// widths, early stopping on.
    pub fn mini() -> Self {
        ModelConfig {
            variant: Variant::Mini,
            d_m: 256,
            d_s: 128,
            early_stopping: Some(10),
            ..ModelConfig::full()
        }
    }

    /// Desk-scale widths for tests and synthetic runs.
    pub fn toy() -> Self {
        ModelConfig {
            d_m: 16,
            d_s: 8,
            window: 9,
            pseaac: PseAacConfig { lambda: 3, weight: 0.05 },
            ..ModelConfig::full()
        }
    }

    pub fn toy_mini() -> Self {
        ModelConfig {
            variant: Variant::Mini,
            d_m: 8,
            d_s: 4,
            early_stopping: Some(10),
            ..ModelConfig::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.d_m == 0 || self.d_s == 0 {
            return bad("d_m and d_s must be positive".into());
        }
        if !self.d_m.is_multiple_of(self.groups.max(1)) || self.groups == 0 {
            return bad(format!("d_m {} is not divisible by {} groups", self.d_m, self.groups));
        }
        if self.heads == 0 || !self.d_m.is_multiple_of(self.heads) {
            return bad(format!("d_m {} is not divisible by {} heads", self.d_m, self.heads));
        }
        if !self.d_m.is_multiple_of(2) {
            return bad(format!("d_m {} must be even for the bidirectional encoder", self.d_m));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return bad(format!("window length must be odd, got {}", self.window));
        }
        if self.dilation == 0 {
            return bad("dilation must be >= 1".into());
        }
        if self.n_state == 0 || self.ember_dim == 0 {
            return bad("n_state and ember_dim must be positive".into());
        }
        if self.aaindex_ids.is_empty() || self.aaindex_ids.len() > AAINDEX_COUNT {
            return bad(format!("between 1 and {AAINDEX_COUNT} AAindex scales are required"));
        }
        self.pseaac.validate()?;
        if self.pseaac.lambda >= self.window {
            return bad(format!(
                "PseAAC lambda {} must be below the window length {}",
                self.pseaac.lambda, self.window
            ));
        }
        for slot in [self.encoders.first, self.encoders.second] {
            if matches!(slot, EncoderKind::Transformer | EncoderKind::Resnet) {
                return bad(format!("encoder slot {slot:?} is not implemented; use bilstm or ssm"));
            }
        }
        self.loss.validate()?;
        self.contrastive.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if !(self.schedule.lambda0 >= 0.0) {
            return bad("schedule lambda0 must be >= 0".into());
        }
        Ok(())
    }
}
