use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsReport};
use super::optim::Adam;
use super::synth::{labels_of, Sample};
use crate::error::{Error, Result};
use crate::features::{stack_bundles, FeatureBundle};
use crate::losses::{balanced_pos_weight, hierarchical_loss, total_loss};
use crate::model::{Model, ModelConfig};
use crate::tensor::{ParamStore, Session, Tensor};

/// Classification threshold for confusion counts and scan calls.
pub const THRESHOLD: f64 = 0.5;
const PREDICT_CHUNK: usize = 64;
/// Stream offset separating the split shuffle from the epoch shuffles.
const SPLIT_STREAM: u64 = 0x5eed;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean supervised loss over the epoch's batches.
    pub l_c: f64,
    /// Mean contrastive loss over the batches where it was computed.
    pub l_cont: Option<f64>,
    pub lambda: f64,
    pub val: Option<MetricsReport>,
    pub wall_ms: f64,
}

/// Wall time is excluded: two runs with the same inputs compare equal.
impl PartialEq for EpochRecord {
    fn eq(&self, o: &Self) -> bool {
        self.epoch == o.epoch
            && self.l_c.to_bits() == o.l_c.to_bits()
            && self.l_cont.map(f64::to_bits) == o.l_cont.map(f64::to_bits)
            && self.lambda.to_bits() == o.lambda.to_bits()
            && self.val == o.val
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept when early stopping is on: the
    /// last one reaching the best validation MCC.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tl_c\tl_cont\tlambda\tval_acc\tval_mcc\tval_auc\tval_ap\twall_ms\n");
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.6}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{:.1}\n",
                e.epoch,
                e.l_c,
                opt(e.l_cont),
                e.lambda,
                opt(e.val.as_ref().map(|m| m.acc)),
                opt(e.val.as_ref().map(|m| m.mcc)),
                opt(e.val.as_ref().and_then(|m| m.auc)),
                opt(e.val.as_ref().and_then(|m| m.ap)),
                e.wall_ms
            ));
        }
        s
    }
}

pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
    pub history: TrainHistory,
}

/// Deterministic train/validation split of `data` by `cfg.val_fraction`.
pub fn split_validation<'a>(cfg: &ModelConfig, data: &'a [Sample]) -> (Vec<&'a Sample>, Vec<&'a Sample>) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ SPLIT_STREAM));
    let n_val = ((data.len() as f64) * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(data.len().saturating_sub(1));
    let val = idx[..n_val].iter().map(|&i| &data[i]).collect();
    let train = idx[n_val..].iter().map(|&i| &data[i]).collect();
    (train, val)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric { op, msg } => Error::Divergence {
            epoch,
            msg: format!("{op}: {msg}"),
        },
        other => other,
    }
}

fn check_classes(labels: &[u8]) -> Result<()> {
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::input("the training split must contain both classes"));
    }
    Ok(())
}

/// Fits a fresh model to `data`, holding out `cfg.val_fraction` for
/// validation metrics and early stopping.
pub fn train(cfg: &ModelConfig, data: &[Sample]) -> Result<Trained> {
    cfg.validate()?;
    cfg.loss.validate()?;
    cfg.contrastive.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::config("lr must be positive and val_fraction in [0, 1)"));
    }
    if data.is_empty() {
        return Err(Error::input("empty training set"));
    }
    let model = Model::new(cfg)?;
    let mut store = ParamStore::from_layout(&model.layout, cfg.seed);
    let (train_set, val_set) = split_validation(cfg, data);
    let train_labels: Vec<u8> = train_set.iter().map(|s| s.label).collect();
    check_classes(&train_labels)?;
    let pos_weight = balanced_pos_weight(&train_labels);
    let mut adam = Adam::new(&store, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lambda = cfg.schedule.lambda(epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let (mut lc_sum, mut cont_sum, mut cont_n) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| train_set[i]).collect();
            let (lc, cont) = step(&model, &mut store, &mut adam, &samples, lambda, pos_weight)
                .map_err(|e| diverged(epoch, e))?;
            lc_sum += lc * samples.len() as f64;
            if let Some(c) = cont {
                cont_sum += c * samples.len() as f64;
                cont_n += samples.len();
            }
        }
        let val = if val_set.is_empty() {
            None
        } else {
            let bundles: Vec<_> = val_set.iter().map(|s| &s.bundle).collect();
            let labels: Vec<u8> = val_set.iter().map(|s| s.label).collect();
            let scores = predict_bundles(&model, &store, &bundles).map_err(|e| diverged(epoch, e))?;
            Some(compute_metrics(&scores, &labels, THRESHOLD)?)
        };
        let record = EpochRecord {
            epoch,
            l_c: lc_sum / train_set.len() as f64,
            l_cont: (cont_n > 0).then(|| cont_sum / cont_n as f64),
            lambda,
            val: val.clone(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        log::info!(
            "epoch {epoch}: l_c {:.4} l_cont {:?} lambda {:.3} val mcc {:?}",
            record.l_c,
            record.l_cont,
            lambda,
            val.as_ref().map(|m| m.mcc)
        );
        history.epochs.push(record);
        if let (Some(patience), Some(m)) = (cfg.early_stopping, &val) {
            // Ties keep the later, better-fitted parameters but do not
            // reset patience.
            let prev = best.as_ref().map(|(b, _)| *b);
            if prev.is_none_or(|b| m.mcc >= b) {
                best = Some((m.mcc, store.clone()));
                history.best_epoch = Some(epoch);
            }
            if prev.is_none_or(|b| m.mcc > b) {
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, kept)) = best {
        store = kept;
    }
    Ok(Trained { model, store, history })
}

/// One optimizer step; returns `(L_c, L_cont)`.
fn step(
    model: &Model,
    store: &mut ParamStore,
    adam: &mut Adam,
    samples: &[&Sample],
    lambda: f64,
    pos_weight: f64,
) -> Result<(f64, Option<f64>)> {
    let bundles: Vec<_> = samples.iter().map(|s| &s.bundle).collect();
    let inputs = stack_bundles(&bundles)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let targets: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let (grads, updates, lc, cont) = {
        let mut s = Session::new(store, true);
        let out = model.forward(&mut s, &inputs)?;
        let l_c = model.cfg.loss.apply(&mut s, out.logits, &targets, pos_weight)?;
        let l_cont = if lambda != 0.0 && samples.len() >= 2 {
            let gamma = s.p(model.temperature);
            Some(hierarchical_loss(&mut s, out.stages, &labels, gamma, model.cfg.contrastive.beta)?.total)
        } else {
            None
        };
        let total = total_loss(&mut s, l_c, l_cont, lambda)?;
        let lt = s.value(total).item();
        if !lt.is_finite() {
            return Err(Error::numeric("train", format!("loss is {lt}")));
        }
        let lc = s.value(l_c).item();
        let cont = l_cont.map(|v| s.value(v).item());
        let grads = s.param_grads(total)?;
        (grads, s.into_buffer_updates(), lc, cont)
    };
    store.accumulate(&grads);
    store.apply_buffer_updates(updates);
    adam.step(store)?;
    model.cfg.contrastive.clamp(store);
    Ok((lc, cont))
}

/// Sigmoid probabilities in inference mode. Each sample's score depends
/// only on its own features, so chunking does not change results.
pub fn predict(model: &Model, store: &ParamStore, samples: &[Sample]) -> Result<Vec<f64>> {
    let bundles: Vec<_> = samples.iter().map(|s| &s.bundle).collect();
    predict_bundles(model, store, &bundles)
}

pub fn predict_bundles(model: &Model, store: &ParamStore, bundles: &[&FeatureBundle]) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = bundles
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let inputs = stack_bundles(chunk)?;
            predict_batch(model, store, &inputs)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Probabilities for already stacked `[B×L×d]` inputs.
pub fn predict_batch(model: &Model, store: &ParamStore, inputs: &[Tensor; 6]) -> Result<Vec<f64>> {
    let mut s = Session::new(store, false);
    let out = model.forward(&mut s, inputs)?;
    let p = s.sigmoid(out.logits)?;
    let v = s.value(p).data().to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("predict", "non-finite probability"));
    }
    Ok(v)
}

pub fn evaluate(model: &Model, store: &ParamStore, samples: &[Sample]) -> Result<MetricsReport> {
    let scores = predict(model, store, samples)?;
    compute_metrics(&scores, &labels_of(samples), THRESHOLD)
}
