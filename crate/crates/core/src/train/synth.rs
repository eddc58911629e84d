use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::FeatureBundle;
use crate::model::ModelConfig;
use crate::tensor::Tensor;

/// One labelled window.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub bundle: FeatureBundle,
    pub label: u8,
}

pub fn labels_of(samples: &[Sample]) -> Vec<u8> {
    samples.iter().map(|s| s.label).collect()
}

/// Class-conditional Gaussian data shaped for `cfg`: every entry of every
/// stream is `N(0,1)`, and each row is shifted by `(y − ½)·separation·u`
/// where `u` is a random unit direction drawn once per stream. The class
/// means therefore sit `separation` apart. Samples come back shuffled.
pub fn synth_dataset(cfg: &ModelConfig, seed: u64, n_per_class: usize, separation: f64) -> Result<Vec<Sample>> {
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::usage(format!("separation must be >= 0, got {separation}")));
    }
    let dims = crate::model::input_dims(cfg);
    let len = cfg.window;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = dims
        .iter()
        .map(|&d| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let label = (i % 2) as u8;
        let shift = (label as f64 - 0.5) * separation;
        let mut streams = dims.iter().zip(&dirs).map(|(&d, u)| {
            let data = (0..len * d)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + shift * u[k % d]
                })
                .collect();
            Tensor::new(vec![len, d], data).expect("positive extents")
        });
        let mut next = || streams.next().expect("six streams");
        let bundle = FeatureBundle {
            master_a: next(),
            master_b: next(),
            ember: next(),
            pseaac: next(),
            blosum: next(),
            aaindex: next(),
        };
        out.push(Sample {
            id: format!("synth_{i}"),
            bundle,
            label,
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Train and test sets drawn from one [`synth_dataset`] call, so both share
/// the class directions; class counts are exact in each split.
pub fn synth_split(
    cfg: &ModelConfig,
    seed: u64,
    train_per_class: usize,
    test_per_class: usize,
    separation: f64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let all = synth_dataset(cfg, seed, train_per_class + test_per_class, separation)?;
    let mut taken = [0usize; 2];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in all {
        let k = s.label as usize;
        if taken[k] < train_per_class {
            train.push(s);
        } else {
            test.push(s);
        }
        taken[k] += 1;
    }
    Ok((train, test))
}
