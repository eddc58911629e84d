//! Finite-difference checks through every block, loss and the whole model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoders::{BiLstm, Ssm};
use crate::error::{Error, Result};
use crate::fusion::{Bgca, Bhgfn, Hdwf, Ldfn, LdfnKind, Macp, LDFN_INPUT_DIMS};
use crate::losses::{cross_layer_loss, hierarchical_loss, intra_layer_loss, stage_embedding, SupervisedLoss, TEMPERATURE_PATH};
use crate::model::{input_dims, Model, ModelConfig};
use crate::tensor::{finite_diff_check, GradCheckOptions, Init, ParamLayout, ParamStore, Session, Tensor, Var};

/// Batch size used throughout the suite.
pub const SUITE_BATCH: usize = 2;
const COORDS: usize = 64;
const PIPELINE_COORDS: usize = 160;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub coords: usize,
    pub worst_path: String,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `Σ wᵢ yᵢ` with fixed random weights.
fn probe(s: &mut Session, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..s.value(y).numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    s.dot_const(y, w)
}

fn check(
    name: &'static str,
    store: &ParamStore,
    coords: usize,
    seed: u64,
    f: impl Fn(&mut Session) -> Result<Var>,
) -> Result<SuiteEntry> {
    let opts = GradCheckOptions {
        coords,
        seed,
        ..Default::default()
    };
    let r = finite_diff_check(f, store, &opts)?;
    log::debug!("{name}: max rel err {:.3e} at {}[{}]", r.max_rel_err, r.worst_path, r.worst_index);
    Ok(SuiteEntry {
        name,
        max_rel_err: r.max_rel_err,
        coords: r.coords_checked,
        worst_path: r.worst_path,
    })
}

/// Runs the suite with master width `d_m` (slave width `d_m/2`) on
/// sequences of length `len`.
pub fn gradient_suite(d_m: usize, len: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    if d_m < 8 || !d_m.is_multiple_of(8) {
        return Err(Error::config(format!("suite width must be a positive multiple of 8, got {d_m}")));
    }
    if len < 5 || len.is_multiple_of(2) {
        return Err(Error::config(format!("suite length must be odd and at least 5, got {len}")));
    }
    let (b, d_s) = (SUITE_BATCH, d_m / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    {
        let mut layout = ParamLayout::new();
        let blk = Bgca::new(&mut layout, "bgca", d_m, 4)?;
        let store = ParamStore::from_layout(&layout, rng.gen());
        let (x1, x2) = (uniform(&[b, len, d_m], &mut rng), uniform(&[b, len, d_m], &mut rng));
        out.push(check("bgca", &store, COORDS, seed, |s| {
            let (a, c) = (s.input(x1.clone()), s.input(x2.clone()));
            let y = blk.forward(s, a, c)?;
            probe(s, y, seed)
        })?);
    }
    for (name, kind) in [("ldfn", LdfnKind::Full), ("ldfn_mini", LdfnKind::Mini)] {
        let mut layout = ParamLayout::new();
        let blk = Ldfn::new(&mut layout, "ldfn", d_s, kind);
        let store = ParamStore::from_layout(&layout, rng.gen());
        let xs: Vec<Tensor> = LDFN_INPUT_DIMS.iter().map(|&d| uniform(&[b, len, d], &mut rng)).collect();
        out.push(check(name, &store, COORDS, seed, |s| {
            let v: Vec<Var> = xs.iter().map(|x| s.input(x.clone())).collect();
            let y = blk.forward(s, v[0], v[1], v[2], v[3])?;
            probe(s, y, seed)
        })?);
    }
    {
        let mut layout = ParamLayout::new();
        let blk = Macp::new(&mut layout, "macp", d_s, 2);
        let store = ParamStore::from_layout(&layout, rng.gen());
        let x = uniform(&[b, len, d_s], &mut rng);
        out.push(check("macp", &store, COORDS, seed, |s| {
            let xv = s.input(x.clone());
            let (f1, f2, f3) = blk.forward(s, xv)?;
            let cat = s.concat(&[f1, f2, f3], 2)?;
            probe(s, cat, seed)
        })?);
    }
    {
        let mut layout = ParamLayout::new();
        let blk = Bhgfn::new(&mut layout, "bhgfn", d_m, d_s);
        let store = ParamStore::from_layout(&layout, rng.gen());
        let (h1, h2) = (uniform(&[b, len, d_m], &mut rng), uniform(&[b, len, d_s], &mut rng));
        out.push(check("bhgfn", &store, COORDS, seed, |s| {
            let (a, c) = (s.input(h1.clone()), s.input(h2.clone()));
            let y = blk.forward(s, a, c)?;
            probe(s, y, seed)
        })?);
    }
    {
        let mut layout = ParamLayout::new();
        let blk = Hdwf::new(&mut layout, "hdwf", d_m, 4)?;
        let mut store = ParamStore::from_layout(&layout, rng.gen());
        // Off-zero blend scalars so every path carries signal.
        store.set("hdwf.gamma_blend", &[0.3])?;
        store.set("hdwf.beta_blend", &[-0.2])?;
        store.set("hdwf.layer_scale", uniform(&[d_m], &mut rng).data())?;
        let (m, sl) = (uniform(&[b, len, d_m], &mut rng), uniform(&[b, len, d_m], &mut rng));
        out.push(check("hdwf", &store, COORDS, seed, |s| {
            let (a, c) = (s.input(m.clone()), s.input(sl.clone()));
            let y = blk.forward(s, a, c)?;
            probe(s, y, seed)
        })?);
    }
    {
        let mut layout = ParamLayout::new();
        let enc = BiLstm::new(&mut layout, "bilstm", d_m)?;
        let store = ParamStore::from_layout(&layout, rng.gen());
        let x = uniform(&[b, len, d_m], &mut rng);
        out.push(check("bilstm", &store, COORDS, seed, |s| {
            let xv = s.input(x.clone());
            let y = enc.forward(s, xv)?;
            probe(s, y, seed)
        })?);
    }
    {
        let mut layout = ParamLayout::new();
        let enc = Ssm::new(&mut layout, "ssm", d_m, 8)?;
        let store = ParamStore::from_layout(&layout, rng.gen());
        let x = uniform(&[b, len, d_m], &mut rng);
        out.push(check("ssm", &store, COORDS, seed, |s| {
            let xv = s.input(x.clone());
            let y = enc.forward(s, xv)?;
            probe(s, y, seed)
        })?);
    }

    // Losses, differentiated with respect to their inputs held as
    // parameters. Four samples so every anchor has a positive.
    let labels = [0u8, 1, 1, 0];
    let targets = [0.0, 1.0, 1.0, 0.0];
    let mut layout = ParamLayout::new();
    let logits = layout.add("logits", &[4], Init::Normal(1.0));
    let stages: Vec<_> = (0..3)
        .map(|k| layout.add(format!("stage{k}"), &[4, len, d_s], Init::Normal(1.0)))
        .collect();
    let gamma = layout.add(TEMPERATURE_PATH, &[1], Init::Const(0.5));
    let store = ParamStore::from_layout(&layout, rng.gen());
    for (name, loss) in [
        ("focal_loss", SupervisedLoss::Focal { gamma: 2.0, alpha: 0.25 }),
        ("weighted_bce", SupervisedLoss::Wce { pos_weight: Some(1.7) }),
    ] {
        out.push(check(name, &store, 8, seed, |s| {
            let z = s.p(logits);
            loss.apply(s, z, &targets, 1.0)
        })?);
    }
    out.push(check("intra_layer_loss", &store, COORDS, seed, |s| {
        let f = s.p(stages[0]);
        let z = stage_embedding(s, f)?;
        let g = s.p(gamma);
        intra_layer_loss(s, z, &labels, g)
    })?);
    out.push(check("cross_layer_loss", &store, COORDS, seed, |s| {
        let (f0, f1) = (s.p(stages[0]), s.p(stages[1]));
        let z0 = stage_embedding(s, f0)?;
        let z1 = stage_embedding(s, f1)?;
        let g = s.p(gamma);
        cross_layer_loss(s, z0, z1, g)
    })?);
    out.push(check("hierarchical_loss", &store, COORDS, seed, |s| {
        let f: Vec<Var> = stages.iter().map(|&p| s.p(p)).collect();
        let g = s.p(gamma);
        Ok(hierarchical_loss(s, [f[0], f[1], f[2]], &labels, g, 0.7)?.total)
    })?);

    {
        let cfg = ModelConfig {
            d_m,
            d_s,
            window: len,
            ..ModelConfig::toy()
        };
        let model = Model::new(&cfg)?;
        let store = ParamStore::from_layout(&model.layout, rng.gen());
        let inputs: Vec<Tensor> = input_dims(&cfg).iter().map(|&d| uniform(&[b, len, d], &mut rng)).collect();
        let inputs: [Tensor; 6] = inputs.try_into().expect("six streams");
        out.push(check("pipeline", &store, PIPELINE_COORDS, seed, |s| {
            let o = model.forward(s, &inputs)?;
            let lc = cfg.loss.apply(s, o.logits, &targets[1..3], 1.0)?;
            let g = s.p(model.temperature);
            let h = hierarchical_loss(s, o.stages, &labels[1..3], g, cfg.contrastive.beta)?;
            let h = s.scale(h.total, 0.5)?;
            s.add(lc, h)
        })?);
    }
    Ok(out)
}
