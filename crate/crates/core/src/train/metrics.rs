//! Threshold and ranking metrics for binary site prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
    /// 0 when there are no positives.
    pub sen: f64,
    /// 0 when there are no negatives.
    pub spec: f64,
    pub mcc: f64,
    /// `None` unless both classes are present.
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub threshold: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc(tp: usize, tn: usize, fp: usize, fn_: usize) -> f64 {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::usage("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::usage("scores contain NaN"));
    }
    Ok(())
}

/// Descending score order with tied scores grouped: `(positives, negatives)`
/// per distinct score.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last: Option<f64> = None;
    for i in idx {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        if labels[i] == 1 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Area under the ROC curve; tied positive/negative pairs count ½.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    // Walk groups from the top; each positive beats every negative below it.
    let mut neg_below = neg as f64;
    let mut wins = 0.0;
    for (p, n) in tie_groups(scores, labels) {
        neg_below -= n as f64;
        wins += p as f64 * (neg_below + 0.5 * n as f64);
    }
    Ok(Some(wins / (pos as f64 * neg as f64)))
}

/// Step-wise average precision `Σ (R_k − R_{k−1})·P_k` over the distinct
/// score thresholds.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Ok(None);
    }
    let (mut tp, mut seen, mut sum) = (0usize, 0usize, 0.0);
    for (p, n) in tie_groups(scores, labels) {
        tp += p;
        seen += p + n;
        sum += p as f64 * tp as f64 / seen as f64;
    }
    // Rounding can push a perfect ranking a few ulps past 1.
    Ok(Some((sum / pos as f64).min(1.0)))
}

/// Confusion counts at `score ≥ threshold` plus the ranking metrics.
pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    check(scores, labels)?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(MetricsReport {
        tp,
        tn,
        fp,
        fn_,
        acc: ratio(tp + tn, scores.len()),
        sen: ratio(tp, tp + fn_),
        spec: ratio(tn, tn + fp),
        mcc: mcc(tp, tn, fp, fn_),
        auc: auc(scores, labels)?,
        ap: average_precision(scores, labels)?,
        threshold,
    })
}
