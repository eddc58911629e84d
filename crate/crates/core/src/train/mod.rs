//! Training, evaluation, ablations and the sliding-window scanner.

mod ablation;
mod checkpoint;
mod gradsuite;
mod metrics;
mod mini;
mod optim;
mod scan;
mod synth;
mod timing;
mod trainer;

pub use ablation::{ablation_configs, ablation_param_counts, ablation_tsv, run_ablation, AblationRow, ABLATIONS};
pub use gradsuite::{gradient_suite, SuiteEntry, SUITE_BATCH};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, restore_checkpoint, save_checkpoint};
pub use metrics::{auc, average_precision, compute_metrics, mcc, MetricsReport};
pub use mini::{count_ratio, mini_compare, MetricDeltas, MiniReport};
pub use optim::Adam;
pub use scan::{centered_window, scan_tsv, sliding_window_scan, ScanRow};
pub use synth::{labels_of, synth_dataset, synth_split, Sample};
pub use timing::inference_ms_per_sample;
pub use trainer::{
    evaluate, predict, predict_batch, predict_bundles, split_validation, train, EpochRecord, Trained,
    TrainHistory, THRESHOLD,
};
