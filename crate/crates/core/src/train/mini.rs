use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::synth::Sample;
use super::timing::inference_ms_per_sample;
use super::trainer::{evaluate, train};
use crate::error::Result;
use crate::model::{Model, ModelConfig};

const TIMING_REPS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub acc: f64,
    pub sen: f64,
    pub spec: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
}

impl MetricDeltas {
    /// `mini − full` for each metric.
    pub fn between(full: &MetricsReport, mini: &MetricsReport) -> Self {
        let d = |a: Option<f64>, b: Option<f64>| Some(b? - a?);
        MetricDeltas {
            acc: mini.acc - full.acc,
            sen: mini.sen - full.sen,
            spec: mini.spec - full.spec,
            mcc: mini.mcc - full.mcc,
            auc: d(full.auc, mini.auc),
            ap: d(full.ap, mini.ap),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniReport {
    pub full_params: usize,
    pub mini_params: usize,
    /// `mini_params / full_params`.
    pub count_ratio: f64,
    pub full_ms_per_sample: f64,
    pub mini_ms_per_sample: f64,
    /// `mini / full` inference time.
    pub latency_ratio: f64,
    pub full: MetricsReport,
    pub mini: MetricsReport,
    pub deltas: MetricDeltas,
}

/// Parameter ratio `mini / full` of two layouts, without training.
pub fn count_ratio(full: &ModelConfig, mini: &ModelConfig) -> Result<f64> {
    let f = Model::new(full)?.param_count(None);
    let m = Model::new(mini)?.param_count(None);
    Ok(m as f64 / f as f64)
}

/// Trains both configurations on `train_set` and compares them on
/// `test_set`.
pub fn mini_compare(
    full_cfg: &ModelConfig,
    mini_cfg: &ModelConfig,
    train_set: &[Sample],
    test_set: &[Sample],
) -> Result<MiniReport> {
    let full = train(full_cfg, train_set)?;
    let mini = train(mini_cfg, train_set)?;
    let full_metrics = evaluate(&full.model, &full.store, test_set)?;
    let mini_metrics = evaluate(&mini.model, &mini.store, test_set)?;
    let full_ms = inference_ms_per_sample(&full.model, &full.store, test_set, TIMING_REPS)?;
    let mini_ms = inference_ms_per_sample(&mini.model, &mini.store, test_set, TIMING_REPS)?;
    let (fp, mp) = (full.model.param_count(None), mini.model.param_count(None));
    Ok(MiniReport {
        full_params: fp,
        mini_params: mp,
        count_ratio: mp as f64 / fp as f64,
        full_ms_per_sample: full_ms,
        mini_ms_per_sample: mini_ms,
        latency_ratio: mini_ms / full_ms,
        deltas: MetricDeltas::between(&full_metrics, &mini_metrics),
        full: full_metrics,
        mini: mini_metrics,
    })
}
