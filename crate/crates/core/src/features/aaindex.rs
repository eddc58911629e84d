use super::{residue_index, validate_window};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Published per-residue scales, values in `ARNDCQEGHILKMFPSTWYV` order.
#[rustfmt::skip]
const TABLE: [(&str, [f64; 20]); 31] = [
    ("kyte_doolittle_hydropathy", [1.8, -4.5, -3.5, -3.5, 2.5, -3.5, -3.5, -0.4, -3.2, 4.5, 3.8, -3.9, 1.9, 2.8, -1.6, -0.8, -0.7, -0.9, -1.3, 4.2]),
    ("hopp_woods_hydrophilicity", [-0.5, 3.0, 0.2, 3.0, -1.0, 0.2, 3.0, 0.0, -0.5, -1.8, -1.8, 3.0, -1.3, -2.5, 0.0, 0.3, -0.4, -3.4, -2.3, -1.5]),
    ("eisenberg_consensus_hydrophobicity", [0.62, -2.53, -0.78, -0.90, 0.29, -0.85, -0.74, 0.48, -0.40, 1.38, 1.06, -1.50, 0.64, 1.19, 0.12, -0.18, -0.05, 0.81, 0.26, 1.08]),
    ("side_chain_mass", [15.0, 101.0, 58.0, 59.0, 47.0, 72.0, 73.0, 1.0, 82.0, 57.0, 57.0, 73.0, 75.0, 91.0, 42.0, 31.0, 45.0, 130.0, 107.0, 43.0]),
    ("residue_monoisotopic_mass", [71.03711, 156.10111, 114.04293, 115.02694, 103.00919, 128.05858, 129.04259, 57.02146, 137.05891, 113.08406, 113.08406, 128.09496, 131.04049, 147.06841, 97.05276, 87.03203, 101.04768, 186.07931, 163.06333, 99.06841]),
    ("molecular_weight", [89.09, 174.20, 132.12, 133.10, 121.15, 146.15, 147.13, 75.07, 155.16, 131.17, 131.17, 146.19, 149.21, 165.19, 115.13, 105.09, 119.12, 204.23, 181.19, 117.15]),
    ("grantham_polarity", [8.1, 10.5, 11.6, 13.0, 5.5, 10.5, 12.3, 9.0, 10.4, 5.2, 4.9, 11.3, 5.7, 5.2, 8.0, 9.2, 8.6, 5.4, 6.2, 5.9]),
    ("grantham_volume", [31.0, 124.0, 56.0, 54.0, 55.0, 85.0, 83.0, 3.0, 96.0, 111.0, 111.0, 119.0, 105.0, 132.0, 32.5, 32.0, 61.0, 170.0, 136.0, 84.0]),
    ("grantham_composition", [0.0, 0.65, 1.33, 1.38, 2.75, 0.89, 0.92, 0.74, 0.58, 0.0, 0.0, 0.33, 0.0, 0.0, 0.39, 1.42, 0.71, 0.13, 0.20, 0.0]),
    ("zimmerman_bulkiness", [11.50, 14.28, 12.82, 11.68, 13.46, 14.45, 13.57, 3.40, 13.69, 21.40, 21.40, 15.71, 16.25, 19.80, 17.43, 9.47, 15.77, 21.67, 18.03, 21.57]),
    ("zimmerman_polarity", [0.00, 52.00, 3.38, 49.70, 1.48, 3.53, 49.90, 0.00, 51.60, 0.13, 0.13, 49.50, 1.43, 0.35, 1.58, 1.67, 1.66, 2.10, 1.61, 0.13]),
    ("isoelectric_point", [6.00, 10.76, 5.41, 2.77, 5.05, 5.65, 3.22, 5.97, 7.59, 6.02, 5.98, 9.74, 5.74, 5.48, 6.30, 5.68, 5.66, 5.89, 5.66, 5.96]),
    ("chou_fasman_helix", [1.42, 0.98, 0.67, 1.01, 0.70, 1.11, 1.51, 0.57, 1.00, 1.08, 1.21, 1.16, 1.45, 1.13, 0.57, 0.77, 0.83, 1.08, 0.69, 1.06]),
    ("chou_fasman_sheet", [0.83, 0.93, 0.89, 0.54, 1.19, 1.10, 0.37, 0.75, 0.87, 1.60, 1.30, 0.74, 1.05, 1.38, 0.55, 0.75, 1.19, 1.37, 1.47, 1.70]),
    ("chou_fasman_turn", [0.66, 0.95, 1.56, 1.46, 1.19, 0.98, 0.74, 1.56, 0.95, 0.47, 0.59, 1.01, 0.60, 0.60, 1.52, 1.43, 0.96, 0.96, 1.14, 0.50]),
    ("engelman_ges_transfer", [1.6, -12.3, -4.8, -9.2, 2.0, -4.1, -8.2, 1.0, -3.0, 3.1, 2.8, -8.8, 3.4, 3.7, -0.2, 0.6, 1.2, 1.9, -0.7, 2.6]),
    ("wimley_white_interface", [0.17, 0.81, 0.42, 1.23, -0.24, 0.58, 2.02, 0.01, 0.96, -0.31, -0.56, 0.99, -0.23, -1.13, 0.45, 0.13, 0.14, -1.85, -0.94, 0.07]),
    ("fauchere_pliska_hydrophobicity", [0.31, -1.01, -0.60, -0.77, 1.54, -0.22, -0.64, 0.00, 0.13, 1.80, 1.70, -0.99, 1.23, 1.79, 0.72, -0.04, 0.26, 2.25, 0.96, 1.22]),
    ("bhaskaran_flexibility", [0.360, 0.530, 0.460, 0.510, 0.350, 0.490, 0.500, 0.540, 0.320, 0.460, 0.370, 0.470, 0.300, 0.310, 0.510, 0.510, 0.440, 0.310, 0.420, 0.390]),
    ("codon_count", [4.0, 6.0, 2.0, 2.0, 2.0, 2.0, 2.0, 4.0, 2.0, 3.0, 6.0, 2.0, 1.0, 2.0, 4.0, 6.0, 4.0, 1.0, 2.0, 4.0]),
    ("chothia_accessible_area", [115.0, 225.0, 160.0, 150.0, 135.0, 180.0, 190.0, 75.0, 195.0, 175.0, 170.0, 200.0, 185.0, 210.0, 145.0, 115.0, 140.0, 255.0, 230.0, 155.0]),
    ("zamyatnin_volume", [88.6, 173.4, 114.1, 111.1, 108.5, 143.8, 138.4, 60.1, 153.2, 166.7, 166.7, 168.6, 162.9, 189.9, 112.7, 89.0, 116.1, 227.8, 193.6, 140.0]),
    ("net_charge", [0.0, 1.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
    ("sweet_eisenberg_omh", [-0.40, -0.59, -0.92, -1.31, 0.17, -0.91, -1.22, -0.67, -0.64, 1.25, 1.22, -0.67, 1.02, 1.92, -0.49, -0.55, -0.28, 0.50, 1.67, 0.91]),
    ("rose_area_loss", [0.74, 0.64, 0.63, 0.62, 0.91, 0.62, 0.62, 0.72, 0.78, 0.88, 0.85, 0.52, 0.85, 0.88, 0.64, 0.66, 0.70, 0.85, 0.76, 0.86]),
    ("janin_transfer", [0.3, -1.4, -0.5, -0.6, 0.9, -0.7, -0.7, 0.3, -0.1, 0.7, 0.5, -1.8, 0.4, 0.5, -0.3, -0.1, -0.2, 0.3, -0.4, 0.6]),
    ("parker_hydrophilicity", [2.1, 4.2, 7.0, 10.0, 1.4, 6.0, 7.8, 5.7, 2.1, -8.0, -9.2, 5.7, -4.2, -9.2, 2.1, 6.5, 5.2, -10.0, -1.9, -3.7]),
    ("black_mould_hydrophobicity", [0.616, 0.000, 0.236, 0.028, 0.680, 0.251, 0.043, 0.501, 0.165, 0.943, 0.943, 0.283, 0.738, 1.000, 0.711, 0.359, 0.450, 0.878, 0.880, 0.825]),
    ("cowan_whittaker_hydrophobicity", [0.35, -1.50, -0.99, -2.15, 0.76, -0.93, -1.95, 0.00, -0.65, 1.83, 1.80, -1.54, 1.10, 1.69, 0.84, -0.63, -0.27, 1.35, 0.39, 1.32]),
    ("side_chain_heavy_atoms", [1.0, 7.0, 4.0, 4.0, 2.0, 5.0, 5.0, 0.0, 6.0, 4.0, 4.0, 5.0, 4.0, 7.0, 3.0, 2.0, 3.0, 10.0, 8.0, 3.0]),
    ("aromatic", [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]),
];

/// Number of bundled indices; the default selection uses all of them.
pub const AAINDEX_COUNT: usize = TABLE.len();

/// Every bundled index id, in table order.
pub fn aaindex_ids() -> Vec<String> {
    TABLE.iter().map(|(id, _)| id.to_string()).collect()
}

pub fn aaindex_raw(id: &str) -> Option<&'static [f64; 20]> {
    TABLE.iter().find(|(k, _)| *k == id).map(|(_, v)| v)
}

/// Population z-score over the 20 residues; a constant scale maps to zeros.
pub(crate) fn z_normalize(raw: &[f64; 20]) -> [f64; 20] {
    let mean = raw.iter().sum::<f64>() / 20.0;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
    let mut out = [0.0; 20];
    if var > 0.0 {
        let sd = var.sqrt();
        for (o, v) in out.iter_mut().zip(raw) {
            *o = (v - mean) / sd;
        }
    }
    out
}

/// `[L×N]` matrix of normalized index values; `X` rows are zero.
pub fn encode_aaindex<S: AsRef<str>>(window: &str, ids: &[S]) -> Result<Tensor> {
    validate_window(window)?;
    if ids.is_empty() {
        return Err(Error::config("at least one AAindex id is required"));
    }
    let cols: Vec<[f64; 20]> = ids
        .iter()
        .map(|id| {
            aaindex_raw(id.as_ref())
                .map(z_normalize)
                .ok_or_else(|| Error::config(format!("unknown AAindex id {:?}", id.as_ref())))
        })
        .collect::<Result<_>>()?;
    let n = cols.len();
    let mut data = vec![0.0; window.len() * n];
    for (i, c) in window.bytes().enumerate() {
        if let Some(r) = residue_index(c) {
            for (j, col) in cols.iter().enumerate() {
                data[i * n + j] = col[r];
            }
        }
    }
    Tensor::new(vec![window.len(), n], data)
}
