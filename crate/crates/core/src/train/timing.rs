use std::time::Instant;

use super::synth::Sample;
use super::trainer::predict_batch;
use crate::error::{Error, Result};
use crate::features::stack_bundles;
use crate::model::Model;
use crate::tensor::ParamStore;

const TIMING_CHUNK: usize = 32;

/// Best-of-`reps` single-threaded inference time per sample, in ms.
pub fn inference_ms_per_sample(model: &Model, store: &ParamStore, samples: &[Sample], reps: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::usage("cannot time inference on zero samples"));
    }
    let batches = samples
        .chunks(TIMING_CHUNK)
        .map(|c| stack_bundles(&c.iter().map(|s| &s.bundle).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let t0 = Instant::now();
        for b in &batches {
            predict_batch(model, store, b)?;
        }
        best = best.min(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(best / samples.len() as f64)
}
