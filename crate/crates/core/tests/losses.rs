mod common;

use common::{rand_tensor, rand_vec};
use proptest::prelude::*;
use ptmfuse::losses::{
    balanced_pos_weight, cross_layer_loss, hierarchical_loss, intra_layer_loss, total_loss, ContrastiveConfig,
    LossSchedule, SupervisedLoss, TEMPERATURE_PATH,
};
use ptmfuse::tensor::{Init, ParamLayout, ParamStore};
use ptmfuse::{Error, Session, Tensor};

const LN2: f64 = std::f64::consts::LN_2;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_rows(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter()
        .map(|r| {
            let n = dot(r, r).sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

/// Direct evaluation of the supervised contrastive sum.
fn intra_oracle(z: &[Vec<f64>], labels: &[u8], gamma: f64) -> f64 {
    let b = z.len();
    let mut terms = Vec::new();
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..b).filter(|&m| m != i).map(|m| (dot(&z[i], &z[m]) / gamma).exp()).sum();
        let t: f64 = pos
            .iter()
            .map(|&j| -((dot(&z[i], &z[j]) / gamma).exp() / denom).ln())
            .sum::<f64>()
            / pos.len() as f64;
        terms.push(t);
    }
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

fn cross_oracle(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    let n = a.len();
    (0..n)
        .map(|i| {
            let denom: f64 = (0..n).map(|j| (dot(&a[i], &b[j]) / gamma).exp()).sum();
            -((dot(&a[i], &b[i]) / gamma).exp() / denom).ln()
        })
        .sum::<f64>()
        / n as f64
}

fn rows_tensor(z: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(z)
}

fn eval_intra(z: &[Vec<f64>], labels: &[u8], gamma: f64) -> ptmfuse::Result<f64> {
    let store = ParamStore::from_layout(&ParamLayout::new(), 0);
    let mut s = Session::new(&store, false);
    let zv = s.input(rows_tensor(z));
    let g = s.input(Tensor::new(vec![1], vec![gamma]).unwrap());
    let l = intra_layer_loss(&mut s, zv, labels, g)?;
    Ok(s.value(l).item())
}

fn eval_cross(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> ptmfuse::Result<f64> {
    let store = ParamStore::from_layout(&ParamLayout::new(), 0);
    let mut s = Session::new(&store, false);
    let av = s.input(rows_tensor(a));
    let bv = s.input(rows_tensor(b));
    let g = s.input(Tensor::new(vec![1], vec![gamma]).unwrap());
    let l = cross_layer_loss(&mut s, av, bv, g)?;
    Ok(s.value(l).item())
}

fn random_rows(b: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..b).map(|i| rand_vec(d, seed * 131 + i as u64)).collect()
}

// ---- intra-layer ----------------------------------------------------------

#[test]
fn intra_identical_pair_is_zero() {
    let z = vec![vec![0.6, 0.8], vec![0.6, 0.8]];
    assert_eq!(eval_intra(&z, &[1, 1], 1.0).unwrap(), 0.0);
}

#[test]
fn intra_three_sample_closed_form() {
    let z = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let expected = (1.0 + (-1.0f64).exp()).ln();
    assert!((expected - 0.3133).abs() < 1e-4);
    // Anchors 0 and 1 each contribute log(1 + e⁻¹); anchor 2 has no positive.
    assert!((eval_intra(&z, &[0, 0, 1], 1.0).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn intra_matches_direct_sum() {
    let z = unit_rows(&random_rows(6, 5, 1));
    let labels = [0, 1, 1, 0, 1, 0];
    for gamma in [0.07, 0.5, 2.0] {
        let got = eval_intra(&z, &labels, gamma).unwrap();
        assert!((got - intra_oracle(&z, &labels, gamma)).abs() < 1e-10, "gamma {gamma}");
    }
}

#[test]
fn intra_without_positives_is_zero() {
    let z = unit_rows(&random_rows(2, 3, 2));
    assert_eq!(eval_intra(&z, &[0, 1], 0.1).unwrap(), 0.0);
}

#[test]
fn intra_rejects_single_sample() {
    let z = vec![vec![1.0, 0.0]];
    assert!(matches!(eval_intra(&z, &[1], 1.0), Err(Error::Usage(_))));
}

#[test]
fn intra_normalizes_raw_embeddings() {
    let z = random_rows(5, 4, 3);
    let labels = [1, 0, 1, 1, 0];
    let got = eval_intra(&z, &labels, 0.3).unwrap();
    assert!((got - intra_oracle(&unit_rows(&z), &labels, 0.3)).abs() < 1e-10);
}

// ---- cross-layer ----------------------------------------------------------

#[test]
fn cross_orthonormal_closed_form() {
    let e = |i: usize, n: usize| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    for b in [2usize, 3, 4] {
        let z: Vec<Vec<f64>> = (0..b).map(|i| e(i, b)).collect();
        let e1 = std::f64::consts::E;
        let expected = -(e1 / (e1 + (b - 1) as f64)).ln();
        assert!((eval_cross(&z, &z, 1.0).unwrap() - expected).abs() < 1e-12);
    }
    let z2 = vec![e(0, 2), e(1, 2)];
    assert!((eval_cross(&z2, &z2, 1.0).unwrap() - 0.3133).abs() < 1e-4);
}

#[test]
fn cross_single_sample_is_zero() {
    let z = vec![vec![0.0, 1.0]];
    assert_eq!(eval_cross(&z, &z, 0.5).unwrap(), 0.0);
}

#[test]
fn cross_rejects_mismatched_batches() {
    let a = unit_rows(&random_rows(3, 4, 4));
    let b = unit_rows(&random_rows(2, 4, 5));
    assert!(matches!(eval_cross(&a, &b, 1.0), Err(Error::Usage(_))));
}

#[test]
fn cross_matches_direct_sum() {
    let a = unit_rows(&random_rows(5, 6, 6));
    let b = unit_rows(&random_rows(5, 6, 7));
    let got = eval_cross(&a, &b, 0.2).unwrap();
    assert!((got - cross_oracle(&a, &b, 0.2)).abs() < 1e-10);
}

// ---- hierarchical ---------------------------------------------------------

fn pooled_unit(t: &Tensor) -> Vec<Vec<f64>> {
    let [b, l, c] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let rows: Vec<Vec<f64>> = (0..b)
        .map(|bi| {
            (0..c)
                .map(|ch| (0..l).map(|p| t.data()[(bi * l + p) * c + ch]).sum::<f64>() / l as f64)
                .collect()
        })
        .collect();
    unit_rows(&rows)
}

#[test]
fn hierarchical_equals_weighted_parts() {
    let fs: Vec<Tensor> = (0..3).map(|k| rand_tensor(&[6, 5, 4], 10 + k)).collect();
    let labels = [1u8, 0, 1, 1, 0, 0];
    let store = ParamStore::from_layout(&ParamLayout::new(), 0);
    let mut s = Session::new(&store, false);
    let v: Vec<_> = fs.iter().map(|f| s.input(f.clone())).collect();
    let g = s.input(Tensor::new(vec![1], vec![0.07]).unwrap());
    let h = hierarchical_loss(&mut s, [v[0], v[1], v[2]], &labels, g, 0.7).unwrap();

    let z: Vec<_> = fs.iter().map(pooled_unit).collect();
    let intra: Vec<f64> = z.iter().map(|zk| intra_oracle(zk, &labels, 0.07)).collect();
    let cross = [cross_oracle(&z[0], &z[1], 0.07), cross_oracle(&z[1], &z[2], 0.07)];
    let expected = intra.iter().sum::<f64>() / 3.0 + 0.35 * (cross[0] + cross[1]);
    for k in 0..3 {
        assert!((s.value(h.intra[k]).item() - intra[k]).abs() < 1e-10);
    }
    // Composition check against the graph's own parts.
    let parts = (0..3).map(|k| s.value(h.intra[k]).item()).sum::<f64>() / 3.0
        + 0.35 * (s.value(h.cross[0]).item() + s.value(h.cross[1]).item());
    assert!((s.value(h.total).item() - parts).abs() < 1e-12);
    assert!((s.value(h.total).item() - expected).abs() < 1e-10);
    assert_eq!(ContrastiveConfig::default().beta, 0.7);
}

#[test]
fn contrastive_losses_pass_gradient_check_through_temperature() {
    let mut layout = ParamLayout::new();
    let cfg = ContrastiveConfig::default();
    let gamma = cfg.register(&mut layout);
    let fs: Vec<_> = (0..3)
        .map(|k| layout.add(format!("stage{k}"), &[4, 5, 6], Init::Normal(1.0)))
        .collect();
    let labels = [1u8, 0, 1, 0];
    let mut store = ParamStore::from_layout(&layout, 3);
    store.set(TEMPERATURE_PATH, &[0.5]).unwrap();
    let opts = ptmfuse::tensor::GradCheckOptions {
        coords: 128,
        ..Default::default()
    };
    let r = ptmfuse::tensor::finite_diff_check(
        |s| {
            let g = s.p(gamma);
            let v: Vec<_> = fs.iter().map(|&f| s.p(f)).collect();
            Ok(hierarchical_loss(s, [v[0], v[1], v[2]], &labels, g, 0.7)?.total)
        },
        &store,
        &opts,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");

    let only_gamma = ptmfuse::tensor::GradCheckOptions {
        params: Some(vec![gamma]),
        coords: 1,
        ..Default::default()
    };
    let r = ptmfuse::tensor::finite_diff_check(
        |s| {
            let g = s.p(gamma);
            let v: Vec<_> = fs.iter().map(|&f| s.p(f)).collect();
            Ok(hierarchical_loss(s, [v[0], v[1], v[2]], &labels, g, 0.7)?.total)
        },
        &store,
        &only_gamma,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4 && r.worst_path == TEMPERATURE_PATH, "{r:?}");
}

#[test]
fn temperature_is_clamped_to_floor() {
    let cfg = ContrastiveConfig::default();
    let mut layout = ParamLayout::new();
    cfg.register(&mut layout);
    let mut store = ParamStore::from_layout(&layout, 0);
    assert_eq!(store.by_path(TEMPERATURE_PATH).unwrap().value.data(), &[0.07]);
    store.set(TEMPERATURE_PATH, &[-0.5]).unwrap();
    cfg.clamp(&mut store);
    assert_eq!(store.by_path(TEMPERATURE_PATH).unwrap().value.data(), &[1e-3]);
}

// ---- supervised -----------------------------------------------------------

fn eval_supervised(loss: &SupervisedLoss, logits: &[f64], labels: &[f64]) -> f64 {
    let store = ParamStore::from_layout(&ParamLayout::new(), 0);
    let mut s = Session::new(&store, false);
    let x = s.input(Tensor::new(vec![logits.len()], logits.to_vec()).unwrap());
    let l = loss.apply(&mut s, x, labels, 1.0).unwrap();
    s.value(l).item()
}

#[test]
fn focal_closed_forms() {
    let ce = SupervisedLoss::Focal { gamma: 0.0, alpha: 1.0 };
    assert!((eval_supervised(&ce, &[0.0], &[1.0]) - LN2).abs() < 1e-12);
    let f2 = SupervisedLoss::Focal { gamma: 2.0, alpha: 1.0 };
    assert!((eval_supervised(&f2, &[0.0], &[0.0]) - 0.25 * LN2).abs() < 1e-12);
    let def = SupervisedLoss::default();
    assert!(eval_supervised(&def, &[60.0, -60.0], &[1.0, 0.0]) < 1e-20);
}

#[test]
fn wce_closed_forms_and_reduction() {
    let w3 = SupervisedLoss::Wce { pos_weight: Some(3.0) };
    assert!((eval_supervised(&w3, &[0.0], &[1.0]) - 3.0 * LN2).abs() < 1e-12);
    let logits = rand_vec(7, 8);
    let labels: Vec<f64> = (0..7).map(|i| (i % 2) as f64).collect();
    let bce: f64 = logits
        .iter()
        .zip(&labels)
        .map(|(&l, &y)| {
            let p = 1.0 / (1.0 + (-l).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / 7.0;
    let w1 = SupervisedLoss::Wce { pos_weight: Some(1.0) };
    assert!((eval_supervised(&w1, &logits, &labels) - bce).abs() < 1e-12);
    assert_eq!(balanced_pos_weight(&[1, 0, 0, 0]), 3.0);
    assert_eq!(balanced_pos_weight(&[0, 0]), 1.0);
}

#[test]
fn losses_decrease_as_true_class_probability_rises() {
    for loss in [SupervisedLoss::default(), SupervisedLoss::Wce { pos_weight: Some(2.0) }] {
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let l = -4.0 + step as f64 * 0.5;
            let v = eval_supervised(&loss, &[l, -l], &[1.0, 0.0]);
            assert!(v < prev);
            prev = v;
        }
    }
}

// ---- schedule -------------------------------------------------------------

#[test]
fn schedule_decays_linearly_to_zero() {
    let sched = LossSchedule::default();
    assert_eq!(sched.lambda(0, 10), 0.5);
    assert_eq!(sched.lambda(5, 10), 0.25);
    assert_eq!(sched.lambda(10, 10), 0.0);
    assert_eq!(sched.lambda(14, 10), 0.0);
    let fixed = LossSchedule {
        lambda0: 0.5,
        horizon: Some(4),
    };
    assert_eq!(fixed.lambda(2, 100), 0.25);

    let store = ParamStore::from_layout(&ParamLayout::new(), 0);
    let mut s = Session::new(&store, false);
    let lc = s.input(Tensor::scalar(0.8125));
    let lcont = s.input(Tensor::scalar(1.5));
    let at0 = total_loss(&mut s, lc, Some(lcont), sched.lambda(0, 10)).unwrap();
    assert_eq!(s.value(at0).item(), 0.8125 + 0.5 * 1.5);
    let late = total_loss(&mut s, lc, Some(lcont), sched.lambda(12, 10)).unwrap();
    assert_eq!(s.value(late).item(), 0.8125);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn schedule_is_non_increasing(t1 in 0usize..50, dt in 0usize..50, total in 1usize..40, l0 in 0.0f64..2.0) {
        let s = LossSchedule { lambda0: l0, horizon: None };
        prop_assert!(s.lambda(t1 + dt, total) <= s.lambda(t1, total));
    }

    #[test]
    fn intra_is_permutation_and_relabel_invariant(seed in 0u64..500, b in 2usize..7, rot in 1usize..6) {
        let z = unit_rows(&random_rows(b, 4, seed));
        let labels: Vec<u8> = (0..b).map(|i| (seed as usize + i * 7).is_multiple_of(3) as u8).collect();
        let base = eval_intra(&z, &labels, 0.2).unwrap();
        prop_assert!(base >= 0.0);
        let perm: Vec<usize> = (0..b).map(|i| (i + rot) % b).collect();
        let zp: Vec<_> = perm.iter().map(|&i| z[i].clone()).collect();
        let lp: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        prop_assert!((eval_intra(&zp, &lp, 0.2).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        prop_assert!((eval_intra(&z, &flipped, 0.2).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn cross_is_invariant_to_joint_permutation(seed in 0u64..500, b in 1usize..7, rot in 1usize..6) {
        let a = unit_rows(&random_rows(b, 4, seed));
        let c = unit_rows(&random_rows(b, 4, seed + 1000));
        let base = eval_cross(&a, &c, 0.3).unwrap();
        prop_assert!(base >= -1e-15);
        let perm: Vec<usize> = (0..b).map(|i| (i + rot) % b).collect();
        let ap: Vec<_> = perm.iter().map(|&i| a[i].clone()).collect();
        let cp: Vec<_> = perm.iter().map(|&i| c[i].clone()).collect();
        prop_assert!((eval_cross(&ap, &cp, 0.3).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn contrastive_losses_ignore_common_scale(seed in 0u64..500, k in 0.1f64..10.0) {
        let z = random_rows(5, 3, seed);
        let zs: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let labels = [0u8, 1, 0, 1, 1];
        prop_assert!((eval_intra(&z, &labels, 0.5).unwrap() - eval_intra(&zs, &labels, 0.5).unwrap()).abs() < 1e-10);
        let w = random_rows(5, 3, seed + 1);
        let ws: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        prop_assert!((eval_cross(&z, &w, 0.5).unwrap() - eval_cross(&zs, &ws, 0.5).unwrap()).abs() < 1e-10);
    }
}
