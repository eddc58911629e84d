//! Per-window feature matrices: ingested language-model embeddings plus
//! three locally computed residue encodings.

mod aaindex;
mod align;
mod blosum;
mod dataset;
mod embedding_file;
mod fasta;
mod pseaac;
mod synthetic;

pub use aaindex::{aaindex_ids, aaindex_raw, encode_aaindex, AAINDEX_COUNT};
pub use align::{AlignDims, ALIGN_TARGETS};
pub use blosum::{blosum62, encode_blosum62};
pub use dataset::{parse_dataset, read_dataset, write_dataset, SampleRecord};
pub use embedding_file::{EmbeddingFile, EmbeddingWriter, MissingPolicy, DTYPE_F32, DTYPE_F64};
pub use fasta::{parse_fasta, read_fasta, FastaRecord};
pub use pseaac::{encode_pseaac, pseaac_vector, PseAacConfig};
pub use synthetic::ResidueEmbedder;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Canonical residue order used by every encoder.
pub const ALPHABET: &[u8; 20] = b"ARNDCQEGHILKMFPSTWYV";

/// Padding / unknown residue; encodes as an all-zero row.
pub const PAD: u8 = b'X';

pub const MASTER_A_DIM: usize = 1024;
pub const MASTER_B_DIM: usize = 1280;
pub const BLOSUM_DIM: usize = 20;

pub fn residue_index(c: u8) -> Option<usize> {
    ALPHABET.iter().position(|&a| a == c)
}

/// Checks that every character is a canonical residue or `X`.
pub fn validate_window(window: &str) -> Result<()> {
    for (i, c) in window.bytes().enumerate() {
        if c != PAD && residue_index(c).is_none() {
            return Err(Error::input(format!(
                "invalid residue {:?} at position {}",
                c as char,
                i + 1
            )));
        }
    }
    Ok(())
}

/// Raw per-window features, before dimension alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    /// `[L×1024]`
    pub master_a: Tensor,
    /// `[L×1280]`
    pub master_b: Tensor,
    /// `[L×d_e]`
    pub ember: Tensor,
    /// `[L×(20+λ)]`
    pub pseaac: Tensor,
    /// `[L×20]`
    pub blosum: Tensor,
    /// `[L×N_idx]`
    pub aaindex: Tensor,
}

impl FeatureBundle {
    pub fn len(&self) -> usize {
        self.master_a.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn streams(&self) -> [&Tensor; 6] {
        [
            &self.master_a,
            &self.master_b,
            &self.ember,
            &self.pseaac,
            &self.blosum,
            &self.aaindex,
        ]
    }

    /// Channel extents in stream order.
    pub fn dims(&self) -> [usize; 6] {
        self.streams().map(|t| t.shape()[1])
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        for t in self.streams() {
            if t.rank() != 2 || t.shape()[0] != l {
                return Err(Error::shape(
                    "feature_bundle",
                    format!("every stream must be [{l}×d], got {:?}", t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::input("feature bundle holds non-finite values"));
            }
        }
        if self.master_a.shape()[1] != MASTER_A_DIM || self.master_b.shape()[1] != MASTER_B_DIM {
            return Err(Error::config(format!(
                "master embeddings must be {MASTER_A_DIM} and {MASTER_B_DIM} wide, got {} and {}",
                self.master_a.shape()[1],
                self.master_b.shape()[1]
            )));
        }
        Ok(())
    }

    /// Computes the three local encodings of `window` and pairs them with
    /// the supplied embeddings.
    pub fn from_window(
        window: &str,
        master_a: Tensor,
        master_b: Tensor,
        ember: Tensor,
        pseaac: &PseAacConfig,
        aaindex_ids: &[String],
    ) -> Result<Self> {
        let b = FeatureBundle {
            master_a,
            master_b,
            ember,
            pseaac: encode_pseaac(window, pseaac)?,
            blosum: encode_blosum62(window)?,
            aaindex: encode_aaindex(window, aaindex_ids)?,
        };
        b.validate()?;
        Ok(b)
    }
}

/// Stacks bundles of equal shape into six `[B×L×d]` tensors.
pub fn stack_bundles(bundles: &[&FeatureBundle]) -> Result<[Tensor; 6]> {
    if bundles.is_empty() {
        return Err(Error::usage("cannot batch zero samples"));
    }
    let mut out = Vec::with_capacity(6);
    for s in 0..6 {
        let items: Vec<&Tensor> = bundles.iter().map(|b| b.streams()[s]).collect();
        out.push(Tensor::stack(&items)?);
    }
    Ok(out.try_into().expect("six streams"))
}
