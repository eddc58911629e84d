//! Dataset assembly from TSV + embedding files, or from the synthetic
//! generator.

use std::fs;
use std::path::Path;

use ptmfuse::features::{parse_dataset, EmbeddingFile, FeatureBundle, MissingPolicy, MASTER_A_DIM, MASTER_B_DIM};
use ptmfuse::model::ModelConfig;
use ptmfuse::train::{synth_split, Sample};
use ptmfuse::Tensor;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::fail::Failure;

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub fn open_embeddings(path: &Path) -> Result<EmbeddingFile, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    EmbeddingFile::from_bytes(&bytes).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// The three ingested embedding files.
pub struct Embeddings {
    files: [EmbeddingFile; 3],
    names: [String; 3],
    policy: MissingPolicy,
}

impl Embeddings {
    pub fn open(cfg: &RunConfig) -> Result<Self, Failure> {
        let e = &cfg.embeddings;
        let paths = [&e.prott5, &e.esm2, &e.ember2];
        let mut files = Vec::with_capacity(3);
        let mut names = Vec::with_capacity(3);
        for p in paths {
            let p = p.as_ref().ok_or_else(|| Failure::config("embedding paths are required"))?;
            files.push(open_embeddings(p)?);
            names.push(p.display().to_string());
        }
        Ok(Embeddings {
            files: files.try_into().expect("three files"),
            names: names.try_into().expect("three names"),
            policy: e.missing,
        })
    }

    fn widths(model: &ModelConfig) -> [usize; 3] {
        [MASTER_A_DIM, MASTER_B_DIM, model.ember_dim]
    }

    /// The three `[rows×d]` matrices stored under `id`.
    pub fn load(&self, id: &str, rows: usize, model: &ModelConfig) -> Result<[Tensor; 3], Failure> {
        let widths = Self::widths(model);
        let mut out = Vec::with_capacity(3);
        for ((f, w), name) in self.files.iter().zip(widths).zip(&self.names) {
            let t = f
                .load(id, w, Some(rows), self.policy)
                .map_err(|e| Failure::config(format!("{name}: {e}")))?;
            out.push(t);
        }
        Ok(out.try_into().expect("three tensors"))
    }
}

/// Rows `center − L/2 ..= center + L/2` of `t`, zero past either end.
pub fn window_rows(t: &Tensor, center: usize, window: usize) -> Tensor {
    let (n, d) = (t.shape()[0], t.shape()[1]);
    let half = (window / 2) as isize;
    let mut data = vec![0.0; window * d];
    for (r, o) in (-half..=half).enumerate() {
        let j = center as isize + o;
        if j >= 0 && (j as usize) < n {
            let j = j as usize;
            data[r * d..(r + 1) * d].copy_from_slice(&t.data()[j * d..(j + 1) * d]);
        }
    }
    Tensor::new(vec![window, d], data).expect("window is non-empty")
}

/// Reads a labelled TSV and pairs every window with its embeddings.
pub fn load_split(cfg: &RunConfig, path: &Path, emb: &Embeddings) -> Result<Vec<Sample>, Failure> {
    let text = read_text(path)?;
    let targets = cfg.target_bytes();
    let records = parse_dataset(&text, &path.display().to_string(), cfg.model.window, targets.as_deref())?;
    if records.is_empty() {
        return Err(Failure::config(format!("{}: no samples", path.display())));
    }
    let m = &cfg.model;
    records
        .par_iter()
        .map(|r| {
            let [a, b, e] = emb.load(&r.id, r.window.len(), m)?;
            let bundle = FeatureBundle::from_window(&r.window, a, b, e, &m.pseaac, &m.aaindex_ids)?;
            Ok(Sample {
                id: r.id.clone(),
                bundle,
                label: r.label,
            })
        })
        .collect()
}

pub fn synthetic(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>), Failure> {
    let s = cfg.synthetic.as_ref().expect("synthetic mode");
    Ok(synth_split(&cfg.model, s.seed, s.train_per_class, s.test_per_class, s.separation)?)
}

/// Train and (optional) test splits as configured.
pub fn splits(cfg: &RunConfig, need_train: bool, need_test: bool) -> Result<(Vec<Sample>, Option<Vec<Sample>>), Failure> {
    if cfg.synthetic.is_some() {
        let (tr, te) = synthetic(cfg)?;
        return Ok((tr, Some(te)));
    }
    let emb = Embeddings::open(cfg)?;
    let train = match (&cfg.train_tsv, need_train) {
        (Some(p), true) => load_split(cfg, p, &emb)?,
        _ => Vec::new(),
    };
    let test = match &cfg.test_tsv {
        Some(p) if need_test || need_train => Some(load_split(cfg, p, &emb)?),
        _ => None,
    };
    Ok((train, test))
}
