use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{residue_index, FeatureBundle, PseAacConfig, MASTER_A_DIM, MASTER_B_DIM};
use crate::error::Result;
use crate::tensor::Tensor;

/// Stand-in for the pretrained language models: a fixed random vector per
/// residue type, drawn from a seeded stream. `X` embeds as zeros.
#[derive(Clone, Debug)]
pub struct ResidueEmbedder {
    tables: [Vec<f64>; 3],
    dims: [usize; 3],
}

impl ResidueEmbedder {
    pub fn new(seed: u64, ember_dim: usize) -> Self {
        let dims = [MASTER_A_DIM, MASTER_B_DIM, ember_dim];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = dims.map(|d| {
            (0..20 * d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect::<Vec<f64>>()
        });
        ResidueEmbedder { tables, dims }
    }

    fn embed(&self, window: &str, which: usize) -> Tensor {
        let d = self.dims[which];
        let mut data = vec![0.0; window.len() * d];
        for (i, c) in window.bytes().enumerate() {
            if let Some(r) = residue_index(c) {
                data[i * d..(i + 1) * d].copy_from_slice(&self.tables[which][r * d..(r + 1) * d]);
            }
        }
        Tensor::new(vec![window.len(), d], data).expect("non-empty window")
    }

    pub fn bundle(&self, window: &str, pseaac: &PseAacConfig, aaindex_ids: &[String]) -> Result<FeatureBundle> {
        FeatureBundle::from_window(
            window,
            self.embed(window, 0),
            self.embed(window, 1),
            self.embed(window, 2),
            pseaac,
            aaindex_ids,
        )
    }
}
