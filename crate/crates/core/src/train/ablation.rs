use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::synth::Sample;
use super::timing::inference_ms_per_sample;
use super::trainer::{evaluate, train};
use crate::error::Result;
use crate::model::{Ablation, Model, ModelConfig, Stage};

const F: Stage = Stage::Fusion;
const B: Stage = Stage::Bypass;

/// Row labels of the interaction ablation, with their stage switches
/// (early, mid, late). The last label keeps its published spelling.
pub const ABLATIONS: [(&str, [Stage; 3]); 8] = [
    ("Full Model", [F, F, F]),
    ("None Early Interaction", [B, F, F]),
    ("None Middle Interaction", [F, B, F]),
    ("None Late Interaction", [F, F, B]),
    ("Only Early Interaction", [F, B, B]),
    ("Only Middle Interaction", [B, F, B]),
    ("Only Late Interaction", [B, B, F]),
    ("Add or Conact", [B, B, B]),
];

/// The eight configurations derived from `base`.
pub fn ablation_configs(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    ABLATIONS
        .iter()
        .map(|&(name, [early, mid, late])| {
            let cfg = ModelConfig {
                ablation: Ablation { early, mid, late },
                ..base.clone()
            };
            (name, cfg)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub metrics: MetricsReport,
    pub params: usize,
    pub fusion_params: usize,
    pub ms_per_sample: f64,
}

/// Trains and evaluates every configuration on the same data and seed.
pub fn run_ablation(base: &ModelConfig, train_set: &[Sample], test_set: &[Sample]) -> Result<Vec<AblationRow>> {
    ablation_configs(base)
        .into_iter()
        .map(|(name, cfg)| {
            log::info!("ablation: {name}");
            let t = train(&cfg, train_set)?;
            Ok(AblationRow {
                config: name.to_string(),
                metrics: evaluate(&t.model, &t.store, test_set)?,
                params: t.model.param_count(None),
                fusion_params: t.model.fusion_param_count(),
                ms_per_sample: inference_ms_per_sample(&t.model, &t.store, test_set, 3)?,
            })
        })
        .collect()
}

/// Parameter counts of the eight layouts without training.
pub fn ablation_param_counts(base: &ModelConfig) -> Result<Vec<(&'static str, usize, usize)>> {
    ablation_configs(base)
        .into_iter()
        .map(|(name, cfg)| {
            let m = Model::new(&cfg)?;
            Ok((name, m.param_count(None), m.fusion_param_count()))
        })
        .collect()
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from("config\tACC\tSEN\tSPEC\tMCC\tAUC\tAP\tparams\tms/sample\n");
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    for r in rows {
        let m = &r.metrics;
        s.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{:.4}\n",
            r.config,
            m.acc,
            m.sen,
            m.spec,
            m.mcc,
            opt(m.auc),
            opt(m.ap),
            r.params,
            r.ms_per_sample
        ));
    }
    s
}
