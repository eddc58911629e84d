mod common;

use common::{gradcheck, layer_norm_oracle, max_abs, probe, rand_tensor};
use proptest::prelude::*;
use ptmfuse::fusion::{dynamic_temperature, Bgca, Bhgfn, Hdwf, Ldfn, LdfnKind, Macp};
use ptmfuse::tensor::{ParamLayout, ParamStore};
use ptmfuse::{Error, Session, Tensor};

const B: usize = 2;
const L: usize = 9;

fn rows_sum_to_one(t: &Tensor) -> f64 {
    let c = *t.shape().last().unwrap();
    t.data()
        .chunks(c)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn all_in_open_unit(t: &Tensor) -> bool {
    t.data().iter().all(|&v| v > 0.0 && v < 1.0)
}

// ---- BGCA ------------------------------------------------------------------

fn bgca(d: usize) -> (ParamLayout, Bgca) {
    let mut layout = ParamLayout::new();
    let block = Bgca::new(&mut layout, "bgca", d, 4).unwrap();
    (layout, block)
}

#[test]
fn bgca_shape_and_gate_sums() {
    let (layout, block) = bgca(16);
    let store = ParamStore::from_layout(&layout, 1);
    let mut s = Session::new(&store, false);
    let x1 = s.input(rand_tensor(&[B, L, 16], 2));
    let x2 = s.input(rand_tensor(&[B, L, 16], 3));
    let t = block.trace(&mut s, x1, x2).unwrap();
    assert_eq!(s.shape(t.out), &[B, L, 16]);
    assert_eq!(s.shape(t.alpha), &[B, L, 3]);
    assert_eq!(s.shape(t.beta), &[B, L, 2]);
    assert!(rows_sum_to_one(s.value(t.alpha)) < 1e-6);
    assert!(rows_sum_to_one(s.value(t.beta)) < 1e-6);
    assert_eq!(t.attn_weights.len(), 8);
    for a in &t.attn_weights {
        assert!(rows_sum_to_one(s.value(*a)) < 1e-6);
    }
}

#[test]
fn bgca_fused_is_bounded_by_its_operands() {
    let (layout, block) = bgca(16);
    let store = ParamStore::from_layout(&layout, 4);
    let mut s = Session::new(&store, false);
    let x1 = s.input(rand_tensor(&[B, L, 16], 5));
    let x2 = s.input(rand_tensor(&[B, L, 16], 6));
    let t = block.trace(&mut s, x1, x2).unwrap();
    let (cf, a2, f) = (s.value(t.conv_fusion), s.value(t.attn2), s.value(t.fused));
    for ((c, a), v) in cf.data().iter().zip(a2.data()).zip(f.data()) {
        assert!(*v >= c.min(*a) - 1e-12 && *v <= c.max(*a) + 1e-12);
    }
}

#[test]
fn bgca_zero_inputs_give_uniform_attention_and_zero_fusion() {
    let (layout, block) = bgca(16);
    let store = ParamStore::from_layout(&layout, 7);
    let mut s = Session::new(&store, false);
    let z = s.input(Tensor::zeros(&[B, L, 16]));
    let t = block.trace(&mut s, z, z).unwrap();
    for a in &t.attn_weights {
        assert!(s.value(*a).data().iter().all(|&v| (v - 1.0 / L as f64).abs() < 1e-15));
    }
    for c in &t.convs {
        assert!(s.value(*c).data().iter().all(|&v| v == 0.0));
    }
    assert!(s.value(t.fused).data().iter().all(|&v| v == 0.0));
    assert!(s.value(t.out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn bgca_rejects_indivisible_width() {
    let mut layout = ParamLayout::new();
    assert!(matches!(Bgca::new(&mut layout, "bgca", 18, 4), Err(Error::Config(_))));
}

#[test]
fn bgca_gradient_check() {
    let (layout, block) = bgca(16);
    let (a, b) = (rand_tensor(&[B, L, 16], 8), rand_tensor(&[B, L, 16], 9));
    let r = gradcheck(&layout, 10, 64, |s| {
        let x1 = s.input(a.clone());
        let x2 = s.input(b.clone());
        let y = block.forward(s, x1, x2)?;
        probe(s, y, 11)
    });
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

// ---- LDFN ------------------------------------------------------------------

fn ldfn_inputs(s: &mut Session, seed: u64) -> [ptmfuse::Var; 4] {
    [256, 256, 512, 512]
        .iter()
        .enumerate()
        .map(|(i, &d)| s.input(rand_tensor(&[B, L, d], seed + i as u64)))
        .collect::<Vec<_>>()
        .try_into()
        .unwrap()
}

#[test]
fn ldfn_shape_gate_and_convex_distillation() {
    let mut layout = ParamLayout::new();
    let block = Ldfn::new(&mut layout, "ldfn", 8, LdfnKind::Full);
    let store = ParamStore::from_layout(&layout, 1);
    let mut s = Session::new(&store, false);
    let [e1, e2, e3, e4] = ldfn_inputs(&mut s, 20);
    let out = block.forward(&mut s, e1, e2, e3, e4).unwrap();
    assert_eq!(s.shape(out), &[B, L, 8]);

    let t = block.pair_a.trace(&mut s, e1, e2).unwrap();
    let g = s.value(t.gate.unwrap()).clone();
    assert!(all_in_open_unit(&g));
    let (a1, a2) = (s.value(t.attn1), s.value(t.attn2));
    let oracle: Vec<f64> = g
        .data()
        .iter()
        .zip(a1.data().iter().zip(a2.data()))
        .map(|(g, (x, y))| g * x + (1.0 - g) * y)
        .collect();
    assert!(max_abs(&oracle, s.value(t.distilled.unwrap()).data()) < 1e-12);
}

#[test]
fn ldfn_saturated_gate_selects_first_direction() {
    let mut layout = ParamLayout::new();
    let block = Ldfn::new(&mut layout, "ldfn", 8, LdfnKind::Full);
    let mut store = ParamStore::from_layout(&layout, 2);
    store.set("ldfn.pair_b.w_g.b", &[30.0; 8]).unwrap();
    let mut s = Session::new(&store, false);
    let [_, _, e3, e4] = ldfn_inputs(&mut s, 30);
    let t = block.pair_b.trace(&mut s, e3, e4).unwrap();
    let d = s.value(t.distilled.unwrap()).data();
    assert!(max_abs(d, s.value(t.attn1).data()) < 1e-6);
}

#[test]
fn ldfn_rejects_channel_mismatch() {
    let mut layout = ParamLayout::new();
    let block = Ldfn::new(&mut layout, "ldfn", 8, LdfnKind::Full);
    let store = ParamStore::from_layout(&layout, 3);
    let mut s = Session::new(&store, false);
    let [e1, e2, _, e4] = ldfn_inputs(&mut s, 40);
    let wrong = s.input(rand_tensor(&[B, L, 256], 44));
    let err = block.forward(&mut s, e1, e2, wrong, e4).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("input 3")), "{err}");
}

#[test]
fn ldfn_mini_keeps_attention_and_is_smaller() {
    let mut full = ParamLayout::new();
    Ldfn::new(&mut full, "ldfn", 8, LdfnKind::Full);
    let mut mini = ParamLayout::new();
    let block = Ldfn::new(&mut mini, "ldfn", 8, LdfnKind::Mini);
    assert!(mini.count(None) < full.count(None));
    assert!(mini.id("ldfn.pair_a.wk.w").is_some());
    assert!(mini.id("ldfn.pair_a.w_g.w").is_none());

    let store = ParamStore::from_layout(&mini, 4);
    let mut s = Session::new(&store, false);
    let [e1, e2, e3, e4] = ldfn_inputs(&mut s, 50);
    let t = block.pair_a.trace(&mut s, e1, e2).unwrap();
    let mean: Vec<f64> = s
        .value(t.attn1)
        .data()
        .iter()
        .zip(s.value(t.attn2).data())
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    assert!(max_abs(&mean, s.value(t.out).data()) < 1e-15);
    let out = block.forward(&mut s, e1, e2, e3, e4).unwrap();
    assert_eq!(s.shape(out), &[B, L, 8]);
}

#[test]
fn ldfn_gradient_check() {
    let mut layout = ParamLayout::new();
    let block = Ldfn::new(&mut layout, "ldfn", 8, LdfnKind::Full);
    let xs: Vec<Tensor> = [256, 256, 512, 512]
        .iter()
        .enumerate()
        .map(|(i, &d)| rand_tensor(&[B, L, d], 60 + i as u64))
        .collect();
    let r = gradcheck(&layout, 12, 64, |s| {
        let v: Vec<_> = xs.iter().map(|x| s.input(x.clone())).collect();
        let y = block.forward(s, v[0], v[1], v[2], v[3])?;
        probe(s, y, 13)
    });
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

// ---- MACP ------------------------------------------------------------------

fn macp(d: usize) -> (ParamLayout, Macp) {
    let mut layout = ParamLayout::new();
    let block = Macp::new(&mut layout, "macp", d, 2);
    (layout, block)
}

#[test]
fn macp_stage_shapes_and_gates() {
    let (layout, block) = macp(8);
    let store = ParamStore::from_layout(&layout, 1);
    let mut s = Session::new(&store, true);
    let x = s.input(rand_tensor(&[B, L, 8], 2));
    let t = block.trace(&mut s, x).unwrap();
    for v in [t.f1, t.f2, t.f3] {
        assert_eq!(s.shape(v), &[B, L, 8]);
    }
    assert_eq!(s.shape(t.alpha), &[B, 1, 8]);
    assert_eq!(s.shape(t.a_c), &[B, 1, 8]);
    assert_eq!(s.shape(t.a_s), &[B, L, 1]);
    assert!(all_in_open_unit(s.value(t.alpha)));
    assert!(all_in_open_unit(s.value(t.a_c)));
    assert!(all_in_open_unit(s.value(t.a_s)));
    let (c3, c5, bl) = (s.value(t.conv3), s.value(t.conv5), s.value(t.blend));
    for ((a, b), v) in c3.data().iter().zip(c5.data()).zip(bl.data()) {
        assert!(*v >= a.min(*b) - 1e-12 && *v <= a.max(*b) + 1e-12);
    }
}

#[test]
fn macp_pinned_se_and_identity_skip_add_exactly() {
    let (layout, block) = macp(8);
    let mut store = ParamStore::from_layout(&layout, 3);
    store.set("macp.se.w2.w", &[0.0; 16]).unwrap();
    store.set("macp.se.w2.b", &[40.0; 8]).unwrap();
    let mut eye = vec![0.0; 64];
    (0..8).for_each(|i| eye[i * 9] = 1.0);
    store.set("macp.skip.w", &eye).unwrap();
    store.set("macp.skip.b", &[0.0; 8]).unwrap();
    let mut s = Session::new(&store, true);
    let x = s.input(rand_tensor(&[B, L, 8], 4));
    let t = block.trace(&mut s, x).unwrap();
    let expected: Vec<f64> = s
        .value(t.f_main)
        .data()
        .iter()
        .zip(s.value(t.f1).data())
        .map(|(a, b)| a + b)
        .collect();
    assert_eq!(s.value(t.f2).data(), &expected[..]);
}

#[test]
fn macp_batch_norm_tracks_running_statistics() {
    let (layout, block) = macp(4);
    let mut store = ParamStore::from_layout(&layout, 5);
    let input = rand_tensor(&[B, L, 4], 6);

    let (bn_in, f_main, updates) = {
        let mut s = Session::new(&store, true);
        let x = s.input(input.clone());
        let t = block.trace(&mut s, x).unwrap();
        let (a, b) = (s.value(t.bn_input).clone(), s.value(t.f_main).clone());
        (a, b, s.into_buffer_updates())
    };
    assert_eq!(updates.len(), 2);
    let n = (B * L) as f64;
    for ch in 0..4 {
        let col: Vec<f64> = bn_in.data().iter().skip(ch).step_by(4).copied().collect();
        let mean = col.iter().sum::<f64>() / n;
        let unbiased = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((updates[0].1[ch] - 0.1 * mean).abs() < 1e-12);
        assert!((updates[1].1[ch] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
        // Training output is standardized with the batch statistics.
        let out_mean = f_main.data().iter().skip(ch).step_by(4).sum::<f64>() / n;
        assert!(out_mean.abs() < 1e-12);
    }
    let mean_upd = updates[0].1.clone();
    store.apply_buffer_updates(updates);
    assert_eq!(store.by_path("macp.bn.running_mean").unwrap().value.data(), &mean_upd[..]);

    // Eval uses the stored statistics, so a single sample is deterministic
    // regardless of the other batch members.
    let one = |seed: u64| {
        let mut s = Session::new(&store, false);
        let mut data = input.data()[..L * 4].to_vec();
        data.extend(rand_tensor(&[1, L, 4], seed).data());
        let x = s.input(Tensor::new(vec![2, L, 4], data).unwrap());
        let (_, f2, _) = block.forward(&mut s, x).unwrap();
        s.value(f2).data()[..L * 4].to_vec()
    };
    assert_eq!(one(100), one(200));
}

#[test]
fn macp_gradient_check() {
    let (layout, block) = macp(8);
    let x = rand_tensor(&[B, L, 8], 7);
    let r = gradcheck(&layout, 14, 64, |s| {
        let xv = s.input(x.clone());
        let (f1, f2, f3) = block.forward(s, xv)?;
        let a = probe(s, f1, 15)?;
        let b = probe(s, f2, 16)?;
        let c = probe(s, f3, 17)?;
        let ab = s.add(a, b)?;
        s.add(ab, c)
    });
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

// ---- BHGFN -----------------------------------------------------------------

#[test]
fn bhgfn_shape_and_gates() {
    let mut layout = ParamLayout::new();
    let block = Bhgfn::new(&mut layout, "bhgfn1", 16, 8);
    assert!(block.lift.is_some());
    let store = ParamStore::from_layout(&layout, 1);
    let mut s = Session::new(&store, false);
    let h1 = s.input(rand_tensor(&[B, L, 16], 2));
    let h2 = s.input(rand_tensor(&[B, L, 8], 3));
    let t = block.trace(&mut s, h1, h2).unwrap();
    assert_eq!(s.shape(t.out), &[B, L, 16]);
    assert_eq!(s.shape(t.kernel), &[B, 16, 3]);
    assert!(rows_sum_to_one(s.value(t.kernel)) < 1e-12);
    for g in [t.g_alpha, t.g_c, t.g_s] {
        assert!(all_in_open_unit(s.value(g)));
    }
}

#[test]
fn bhgfn_reverse_attention_reads_raw_master_state() {
    // With h1 constant along length, A₂ must equal that constant row no
    // matter the query, since K = V = h1 without projection.
    let mut layout = ParamLayout::new();
    let block = Bhgfn::new(&mut layout, "bhgfn1", 8, 8);
    assert!(block.lift.is_none());
    let store = ParamStore::from_layout(&layout, 2);
    let mut s = Session::new(&store, false);
    let row = common::rand_vec(8, 3);
    let h1t = Tensor::from_fn(&[B, L, 8], |i| row[i % 8]);
    let h1 = s.input(h1t.clone());
    let h2 = s.input(rand_tensor(&[B, L, 8], 4));
    let t = block.trace(&mut s, h1, h2).unwrap();
    assert!(max_abs(s.value(t.a2).data(), h1t.data()) < 1e-12);
}

#[test]
fn bhgfn_suppressed_slave_branch_returns_layer_norm_of_master() {
    let mut layout = ParamLayout::new();
    let block = Bhgfn::new(&mut layout, "bhgfn2", 16, 8);
    let mut store = ParamStore::from_layout(&layout, 5);
    store.set("bhgfn2.spatial.w", &[0.0; 48]).unwrap();
    store.set("bhgfn2.spatial.b", &[-1000.0]).unwrap();
    let h1t = rand_tensor(&[B, L, 16], 6);

    let mut s = Session::new(&store, false);
    let h1 = s.input(h1t.clone());
    let h2 = s.input(rand_tensor(&[B, L, 8], 7));
    let t = block.trace(&mut s, h1, h2).unwrap();
    assert!(s.value(t.f_gs).data().iter().all(|&v| v == 0.0));

    let mut r = Session::new(&store, false);
    let h = r.input(h1t.clone());
    let (g, b) = (r.p(store.id("bhgfn2.ln.gain").unwrap()), r.p(store.id("bhgfn2.ln.bias").unwrap()));
    let ln = r.layer_norm(h, g, b, 1e-5).unwrap();
    assert_eq!(s.value(t.out).data(), r.value(ln).data());
    assert!(max_abs(s.value(t.out).data(), &layer_norm_oracle(&h1t, 1e-5)) < 1e-12);
}

#[test]
fn bhgfn_gradient_check() {
    let mut layout = ParamLayout::new();
    let block = Bhgfn::new(&mut layout, "bhgfn1", 16, 8);
    let (a, b) = (rand_tensor(&[B, L, 16], 8), rand_tensor(&[B, L, 8], 9));
    let r = gradcheck(&layout, 16, 64, |s| {
        let h1 = s.input(a.clone());
        let h2 = s.input(b.clone());
        let y = block.forward(s, h1, h2)?;
        probe(s, y, 17)
    });
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

// ---- HDWF ------------------------------------------------------------------

fn hdwf(d: usize) -> (ParamLayout, Hdwf) {
    let mut layout = ParamLayout::new();
    let block = Hdwf::new(&mut layout, "hdwf", d, 4).unwrap();
    (layout, block)
}

#[test]
fn hdwf_attention_rows_and_head_weights_are_distributions() {
    let (layout, block) = hdwf(16);
    let store = ParamStore::from_layout(&layout, 1);
    let mut s = Session::new(&store, false);
    let m = s.input(rand_tensor(&[B, L, 16], 2));
    let sl = s.input(rand_tensor(&[B, L, 16], 3));
    let t = block.trace(&mut s, m, sl).unwrap();
    assert_eq!(s.shape(t.out), &[B, L, 16]);
    assert_eq!(t.attn.len(), 4);
    for a in &t.attn {
        assert_eq!(s.shape(*a), &[B, L, L]);
        assert!(rows_sum_to_one(s.value(*a)) < 1e-6);
    }
    assert!(rows_sum_to_one(s.value(t.head_weights)) < 1e-6);
    assert!(all_in_open_unit(s.value(t.g_c)));
}

#[test]
fn hdwf_output_at_init_is_near_layer_norm_of_fused_features() {
    let (layout, block) = hdwf(16);
    let store = ParamStore::from_layout(&layout, 4);
    let mut s = Session::new(&store, false);
    let mt = rand_tensor(&[B, L, 16], 5);
    let m = s.input(mt.clone());
    let sl = s.input(rand_tensor(&[B, L, 16], 6));
    let t = block.trace(&mut s, m, sl).unwrap();
    let pre: Vec<f64> = s
        .value(t.g_tilde)
        .data()
        .iter()
        .zip(mt.data())
        .map(|(g, m)| g + 1e-6 * m)
        .collect();
    let oracle = layer_norm_oracle(&Tensor::new(vec![B, L, 16], pre).unwrap(), 1e-5);
    assert!(max_abs(s.value(t.out).data(), &oracle) < 1e-9);
}

#[test]
fn hdwf_temperature_is_linear_in_master_mean() {
    let store = ParamStore::from_layout(&ParamLayout::new(), 0);
    let mt = rand_tensor(&[B, L, 16], 7);
    let mut s = Session::new(&store, false);
    let alpha = s.input(Tensor::new(vec![1], vec![1.0]).unwrap());
    let m = s.input(mt.clone());
    let tau = dynamic_temperature(&mut s, m, alpha).unwrap();
    let doubled = s.scale(m, 2.0).unwrap();
    let tau2 = dynamic_temperature(&mut s, doubled, alpha).unwrap();
    assert_eq!(s.shape(tau), &[B, 1, 1]);
    for b in 0..B {
        let sample = &mt.data()[b * L * 16..(b + 1) * L * 16];
        let mean = sample.iter().sum::<f64>() / sample.len() as f64;
        let delta = s.value(tau2).data()[b] - s.value(tau).data()[b];
        assert!((delta - mean).abs() < 1e-12);
        assert!((s.value(tau).data()[b] - (1.0 + mean)).abs() < 1e-12);
    }
}

#[test]
fn hdwf_rejects_indivisible_heads() {
    let mut layout = ParamLayout::new();
    assert!(matches!(Hdwf::new(&mut layout, "hdwf", 10, 4), Err(Error::Config(_))));
}

#[test]
fn hdwf_gradient_check() {
    let (layout, block) = hdwf(16);
    let (a, b) = (rand_tensor(&[B, L, 16], 8), rand_tensor(&[B, L, 16], 9));
    let mut store = ParamStore::from_layout(&layout, 18);
    // Move the blend scalars off zero so their paths carry signal.
    store.set("hdwf.gamma_blend", &[0.3]).unwrap();
    store.set("hdwf.beta_blend", &[-0.2]).unwrap();
    store.set("hdwf.layer_scale", &common::rand_vec(16, 19)).unwrap();
    let opts = ptmfuse::tensor::GradCheckOptions::default();
    let r = ptmfuse::tensor::finite_diff_check(
        |s| {
            let m = s.input(a.clone());
            let sl = s.input(b.clone());
            let y = block.forward(s, m, sl)?;
            probe(s, y, 19)
        },
        &store,
        &opts,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fusion_blocks_preserve_extents(b in 1usize..3, l in 1usize..7, seed in 0u64..1000) {
        let mut layout = ParamLayout::new();
        let bg = Bgca::new(&mut layout, "bgca", 8, 4).unwrap();
        let bh = Bhgfn::new(&mut layout, "bhgfn1", 8, 4);
        let hd = Hdwf::new(&mut layout, "hdwf", 8, 4).unwrap();
        let mc = Macp::new(&mut layout, "macp", 4, 2);
        let store = ParamStore::from_layout(&layout, seed);
        let mut s = Session::new(&store, true);
        let x = s.input(rand_tensor(&[b, l, 8], seed));
        let y = s.input(rand_tensor(&[b, l, 4], seed + 1));
        let f = bg.forward(&mut s, x, x).unwrap();
        prop_assert_eq!(s.shape(f), &[b, l, 8]);
        let (f1, f2, f3) = mc.forward(&mut s, y).unwrap();
        for v in [f1, f2, f3] {
            prop_assert_eq!(s.shape(v), &[b, l, 4]);
        }
        let h = bh.forward(&mut s, f, f1).unwrap();
        prop_assert_eq!(s.shape(h), &[b, l, 8]);
        let o = hd.forward(&mut s, h, x).unwrap();
        prop_assert_eq!(s.shape(o), &[b, l, 8]);
        prop_assert!(s.value(o).is_finite());
    }
}
