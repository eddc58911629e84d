#![allow(dead_code)]

use ptmfuse::tensor::{GradCheckOptions, GradCheckReport, ParamLayout, ParamStore};
use ptmfuse::{Result, Session, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Scalar probe `Σ wᵢ yᵢ` with fixed random weights, so every output
/// coordinate reaches the loss.
pub fn probe(s: &mut Session, y: Var, seed: u64) -> Result<Var> {
    let n = s.value(y).numel();
    s.dot_const(y, rand_vec(n, seed))
}

pub fn gradcheck(
    layout: &ParamLayout,
    seed: u64,
    coords: usize,
    f: impl Fn(&mut Session) -> Result<Var>,
) -> GradCheckReport {
    let store = ParamStore::from_layout(layout, seed);
    let opts = GradCheckOptions {
        coords,
        ..Default::default()
    };
    ptmfuse::tensor::finite_diff_check(f, &store, &opts).expect("gradient check runs")
}

/// Row-wise layer norm with unit gain and zero bias.
pub fn layer_norm_oracle(x: &Tensor, eps: f64) -> Vec<f64> {
    let c = *x.shape().last().unwrap();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        out.extend(row.iter().map(|v| (v - mean) / (var + eps).sqrt()));
    }
    out
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pairwise AUC: every (positive, negative) pair scores 1 if ordered, ½ if
/// tied.
pub fn auc_brute(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// AP by thresholding at every distinct score from the top and summing
/// recall increments times precision.
pub fn ap_brute(scores: &[f64], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    let (mut ap, mut prev_r) = (0.0, 0.0);
    for t in ts {
        let (mut tp, mut called) = (0.0, 0.0);
        for (s, y) in scores.iter().zip(labels) {
            if *s >= t {
                called += 1.0;
                if *y == 1 {
                    tp += 1.0;
                }
            }
        }
        let r = tp / pos;
        ap += (r - prev_r) * (tp / called);
        prev_r = r;
    }
    ap
}

/// Confusion counts `(tp, tn, fp, fn)` at `score >= t`.
pub fn confusion_brute(scores: &[f64], labels: &[u8], t: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (s, y) in scores.iter().zip(labels) {
        match (*s >= t, *y) {
            (true, 1) => c.0 += 1,
            (false, 0) => c.1 += 1,
            (true, _) => c.2 += 1,
            (false, _) => c.3 += 1,
        }
    }
    c
}

pub fn mcc_brute(tp: usize, tn: usize, fp: usize, fn_: usize) -> f64 {
    let f = |v: usize| v as f64;
    let den = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if den.contains(&0) {
        return 0.0;
    }
    (f(tp) * f(tn) - f(fp) * f(fn_)) / den.iter().map(|&d| f(d)).product::<f64>().sqrt()
}

/// Scores on a coarse grid so ties are common, labels with both classes.
pub fn random_scored_labels(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    loop {
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}
