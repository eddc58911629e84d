//! The JSON run configuration.

use std::path::{Path, PathBuf};

use ptmfuse::features::MissingPolicy;
use ptmfuse::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::fail::Failure;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingPaths {
    pub prott5: Option<PathBuf>,
    pub esm2: Option<PathBuf>,
    pub ember2: Option<PathBuf>,
    /// Applied when a sample id is absent from an embedding file.
    pub missing: MissingPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    /// Data seed; the model seed stays in `model.seed`.
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_per_class: 200,
            test_per_class: 50,
            separation: 3.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train_tsv: Option<PathBuf>,
    pub test_tsv: Option<PathBuf>,
    pub embeddings: EmbeddingPaths,
    pub out_dir: PathBuf,
    /// Residues accepted at window centers and scanned for, e.g. `"STY"`.
    pub targets: Option<String>,
    /// When set, data come from the synthetic generator and no embedding
    /// files are read.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train_tsv: None,
            test_tsv: None,
            embeddings: EmbeddingPaths::default(),
            out_dir: PathBuf::from("ptmfuse-out"),
            targets: None,
            synthetic: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn target_bytes(&self) -> Option<Vec<u8>> {
        self.targets.as_ref().map(|t| t.to_ascii_uppercase().into_bytes())
    }

    /// Validates the model block and checks that every input file needed
    /// for `needs_test`/`needs_train` exists, before any compute.
    pub fn validate(&self, needs_train: bool, needs_test: bool) -> Result<(), Failure> {
        self.model.validate()?;
        self.model.loss.validate()?;
        self.model.contrastive.validate()?;
        if let Some(t) = &self.targets {
            if t.is_empty() || !t.bytes().all(|c| ptmfuse::features::residue_index(c.to_ascii_uppercase()).is_some()) {
                return Err(Failure::config(format!("targets {t:?} must be canonical residue letters")));
            }
        }
        if let Some(s) = &self.synthetic {
            if !(s.separation >= 0.0) || s.train_per_class == 0 || s.test_per_class == 0 {
                return Err(Failure::config("synthetic sizes must be positive and separation >= 0"));
            }
            return Ok(());
        }
        let mut required: Vec<(&str, &Option<PathBuf>)> = vec![
            ("embeddings.prott5", &self.embeddings.prott5),
            ("embeddings.esm2", &self.embeddings.esm2),
            ("embeddings.ember2", &self.embeddings.ember2),
        ];
        if needs_train {
            required.push(("train_tsv", &self.train_tsv));
        }
        if needs_test {
            required.push(("test_tsv", &self.test_tsv));
        }
        for (key, p) in required {
            match p {
                None => {
                    return Err(Failure::config(format!(
                        "{key} is required unless synthetic data are used"
                    )))
                }
                Some(p) if !p.is_file() => {
                    return Err(Failure::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}
