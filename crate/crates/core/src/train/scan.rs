use crate::error::{Error, Result};
use crate::features::{validate_window, FeatureBundle, PAD};
use crate::model::Model;
use crate::tensor::ParamStore;

use super::trainer::{predict_bundles, THRESHOLD};

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    /// 1-based.
    pub position: usize,
    pub residue: char,
    /// Exactly 0 at non-target positions.
    pub probability: f64,
    pub call: bool,
}

/// The `window`-long slice centered on `center` (0-based), padded with `X`
/// past either terminus.
pub fn centered_window(seq: &[u8], center: usize, window: usize) -> String {
    let half = (window / 2) as isize;
    (-half..=half)
        .map(|o| {
            let j = center as isize + o;
            if j < 0 || j >= seq.len() as isize {
                PAD as char
            } else {
                seq[j as usize] as char
            }
        })
        .collect()
}

/// Scores every position of `sequence` whose residue is in `targets` by
/// classifying its centered window; other positions are reported as 0.
/// `featurize(center, window)` turns the window centered on the 0-based
/// `center` into model inputs.
pub fn sliding_window_scan<F>(
    sequence: &str,
    targets: &[u8],
    model: &Model,
    store: &ParamStore,
    featurize: F,
) -> Result<Vec<ScanRow>>
where
    F: Fn(usize, &str) -> Result<FeatureBundle>,
{
    if sequence.is_empty() {
        return Err(Error::input("cannot scan an empty sequence"));
    }
    validate_window(sequence)?;
    if targets.is_empty() {
        return Err(Error::usage("no target residues given"));
    }
    let seq = sequence.as_bytes();
    let sites: Vec<usize> = (0..seq.len()).filter(|&i| targets.contains(&seq[i])).collect();
    let bundles = sites
        .iter()
        .map(|&i| featurize(i, &centered_window(seq, i, model.cfg.window)))
        .collect::<Result<Vec<_>>>()?;
    let probs = if bundles.is_empty() {
        Vec::new()
    } else {
        predict_bundles(model, store, &bundles.iter().collect::<Vec<_>>())?
    };
    let mut out: Vec<ScanRow> = seq
        .iter()
        .enumerate()
        .map(|(i, &c)| ScanRow {
            position: i + 1,
            residue: c as char,
            probability: 0.0,
            call: false,
        })
        .collect();
    for (&i, p) in sites.iter().zip(probs) {
        out[i].probability = p;
        out[i].call = p >= THRESHOLD;
    }
    Ok(out)
}

pub fn scan_tsv(rows: &[ScanRow]) -> String {
    let mut s = String::from("position\tresidue\tprobability\tcall\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.position,
            r.residue,
            r.probability,
            u8::from(r.call)
        ));
    }
    s
}
