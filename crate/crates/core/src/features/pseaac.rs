use serde::{Deserialize, Serialize};

use super::aaindex::{aaindex_raw, z_normalize};
use super::{residue_index, validate_window};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scales entering the sequence-order correlation function.
const ORDER_PROPERTIES: [&str; 3] = [
    "eisenberg_consensus_hydrophobicity",
    "hopp_woods_hydrophilicity",
    "side_chain_mass",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseAacConfig {
    /// Number of sequence-order correlation tiers λ.
    pub lambda: usize,
    /// Weight factor w of the correlation tiers.
    pub weight: f64,
}

impl Default for PseAacConfig {
    fn default() -> Self {
        PseAacConfig {
            lambda: 5,
            weight: 0.05,
        }
    }
}

impl PseAacConfig {
    pub fn dim(&self) -> usize {
        20 + self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(Error::config("PseAAC lambda must be at least 1"));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::config(format!("PseAAC weight must lie in (0, 1], got {}", self.weight)));
        }
        Ok(())
    }
}

/// Type-1 pseudo amino-acid composition of the canonical residues in
/// `window` (padding is skipped).
pub fn pseaac_vector(window: &str, cfg: &PseAacConfig) -> Result<Vec<f64>> {
    validate_window(window)?;
    cfg.validate()?;
    let seq: Vec<usize> = window.bytes().filter_map(residue_index).collect();
    let n = seq.len();
    if cfg.lambda >= n {
        return Err(Error::config(format!(
            "PseAAC lambda {} must be below the effective window length {n}",
            cfg.lambda
        )));
    }
    let props: Vec<[f64; 20]> = ORDER_PROPERTIES
        .iter()
        .map(|id| z_normalize(aaindex_raw(id).expect("bundled property")))
        .collect();
    let corr = |a: usize, b: usize| -> f64 {
        props.iter().map(|p| (p[b] - p[a]).powi(2)).sum::<f64>() / props.len() as f64
    };
    let theta: Vec<f64> = (1..=cfg.lambda)
        .map(|k| (0..n - k).map(|i| corr(seq[i], seq[i + k])).sum::<f64>() / (n - k) as f64)
        .collect();

    let freq = composition(&seq);
    let denom = 1.0 + cfg.weight * theta.iter().sum::<f64>();
    let mut out: Vec<f64> = freq.iter().map(|f| f / denom).collect();
    out.extend(theta.iter().map(|t| cfg.weight * t / denom));
    Ok(out)
}

/// Normalized residue frequencies.
fn composition(seq: &[usize]) -> [f64; 20] {
    let mut freq = [0.0; 20];
    for &r in seq {
        freq[r] += 1.0;
    }
    freq.iter_mut().for_each(|f| *f /= seq.len() as f64);
    freq
}

/// The PseAAC vector repeated on every canonical row; `X` rows are zero.
pub fn encode_pseaac(window: &str, cfg: &PseAacConfig) -> Result<Tensor> {
    let v = pseaac_vector(window, cfg)?;
    let d = v.len();
    let mut data = vec![0.0; window.len() * d];
    for (i, c) in window.bytes().enumerate() {
        if residue_index(c).is_some() {
            data[i * d..(i + 1) * d].copy_from_slice(&v);
        }
    }
    Tensor::new(vec![window.len(), d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn homopolymer_composition_is_one() {
        let cfg = PseAacConfig::default();
        let v = pseaac_vector(&"A".repeat(33), &cfg).unwrap();
        assert_eq!(v.len(), 25);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_computed_dipeptide_repeat() {
        // "AKAKAK" with λ=1: every adjacent pair is (A,K) or (K,A).
        let cfg = PseAacConfig { lambda: 1, weight: 0.1 };
        let v = pseaac_vector("AKAKAK", &cfg).unwrap();
        let z: Vec<[f64; 20]> = ORDER_PROPERTIES
            .iter()
            .map(|id| {
                let raw = aaindex_raw(id).unwrap();
                let m = raw.iter().sum::<f64>() / 20.0;
                let sd = (raw.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 20.0).sqrt();
                let mut o = [0.0; 20];
                for i in 0..20 {
                    o[i] = (raw[i] - m) / sd;
                }
                o
            })
            .collect();
        let (a, k) = (0, 11);
        let theta1 = z.iter().map(|p| (p[k] - p[a]).powi(2)).sum::<f64>() / 3.0;
        let denom = 1.0 + 0.1 * theta1;
        assert!((v[a] - 0.5 / denom).abs() < 1e-15);
        assert!((v[k] - 0.5 / denom).abs() < 1e-15);
        assert!((v[20] - 0.1 * theta1 / denom).abs() < 1e-15);
    }

    #[test]
    fn lambda_too_large_is_config_error() {
        let cfg = PseAacConfig { lambda: 5, weight: 0.05 };
        assert!(matches!(pseaac_vector("XXAKTXX", &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn tiled_rows_and_zero_pads() {
        let cfg = PseAacConfig::default();
        let t = encode_pseaac("XXKTAHCAKTLLMX", &cfg).unwrap();
        let d = cfg.dim();
        let v = pseaac_vector("XXKTAHCAKTLLMX", &cfg).unwrap();
        for (i, c) in "XXKTAHCAKTLLMX".bytes().enumerate() {
            let row = &t.data()[i * d..(i + 1) * d];
            if c == b'X' {
                assert!(row.iter().all(|&x| x == 0.0));
            } else {
                assert_eq!(row, v.as_slice());
            }
        }
    }

    fn window_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(b"ARNDCQEGHILKMFPSTWYV".to_vec()), 8..40)
            .prop_map(|v| String::from_utf8(v).unwrap())
    }

    proptest! {
        #[test]
        fn components_sum_to_one(w in window_strategy()) {
            let v = pseaac_vector(&w, &PseAacConfig::default()).unwrap();
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn composition_is_order_free(w in window_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut bytes = w.clone().into_bytes();
            bytes.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p = String::from_utf8(bytes).unwrap();
            let idx = |s: &str| s.bytes().filter_map(residue_index).collect::<Vec<_>>();
            prop_assert_eq!(composition(&idx(&w)), composition(&idx(&p)));
            // the emitted block shares the composition up to the common denominator
            let cfg = PseAacConfig::default();
            let v = pseaac_vector(&p, &cfg).unwrap();
            let total: f64 = v[..20].iter().sum();
            for (x, f) in v[..20].iter().zip(composition(&idx(&w))) {
                prop_assert!((x / total - f).abs() < 1e-12);
            }
        }

        #[test]
        fn encoding_is_pure(w in window_strategy()) {
            let cfg = PseAacConfig::default();
            prop_assert_eq!(encode_pseaac(&w, &cfg).unwrap(), encode_pseaac(&w, &cfg).unwrap());
        }
    }
}
