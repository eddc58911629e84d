//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamGrads, ParamId, ParamStore, Session, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation half-width; must lie in `[1e-7, 1e-3]`.
    pub h: f64,
    /// Number of sampled coordinates across all checked parameters.
    pub coords: usize,
    /// Added to `|analytic|` in the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
    /// Restrict the check to these parameters; `None` checks every
    /// trainable parameter.
    pub params: Option<Vec<ParamId>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            coords: 64,
            floor: 1e-6,
            seed: 0,
            params: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub worst_path: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

fn eval(store: &ParamStore, f: &impl Fn(&mut Session) -> Result<Var>) -> Result<f64> {
    let mut s = Session::new(store, true);
    let loss = f(&mut s)?;
    let v = s.value(loss);
    if v.numel() != 1 {
        return Err(Error::usage("gradient check needs a scalar loss"));
    }
    Ok(v.item())
}

/// Compares analytic gradients against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` on sampled coordinates and returns the maximum
/// of `|analytic − numeric| / (|analytic| + floor)`.
pub fn finite_diff_check(
    f: impl Fn(&mut Session) -> Result<Var>,
    store: &ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut s = Session::new(store, true);
        let loss = f(&mut s)?;
        if s.value(loss).numel() != 1 {
            return Err(Error::usage("gradient check needs a scalar loss"));
        }
        if !s.value(loss).item().is_finite() {
            return Err(Error::numeric("finite_diff_check", "loss is not finite"));
        }
        s.param_grads(loss)?
    };
    compare_gradients(&analytic, |st| eval(st, &f), store, opts)
}

/// The comparison half of [`finite_diff_check`], for gradients obtained by
/// other means.
pub fn compare_gradients(
    analytic: &ParamGrads,
    loss: impl Fn(&ParamStore) -> Result<f64>,
    store: &ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&opts.h) {
        return Err(Error::config(format!("finite-difference step {} outside [1e-7, 1e-3]", opts.h)));
    }
    let wanted: Vec<ParamId> = match &opts.params {
        Some(ids) => ids.clone(),
        None => store.ids().filter(|&id| store.get(id).trainable).collect(),
    };
    let grads: Vec<(ParamId, Vec<f64>)> = wanted
        .iter()
        .map(|&id| {
            let g = analytic
                .0
                .iter()
                .find(|(pid, _)| *pid == id)
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| vec![0.0; store.get(id).value.numel()]);
            (id, g)
        })
        .collect();
    if grads.is_empty() {
        return Err(Error::usage("no parameters to check"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst_path: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for i in 0..opts.coords {
        let (id, g) = &grads[i % grads.len()];
        let idx = rng.gen_range(0..g.len());
        let orig = work.get(*id).value.data()[idx];
        work.get_mut(*id).value.data_mut()[idx] = orig + opts.h;
        let up = finite(loss(&work)?)?;
        work.get_mut(*id).value.data_mut()[idx] = orig - opts.h;
        let down = finite(loss(&work)?)?;
        work.get_mut(*id).value.data_mut()[idx] = orig;

        let numeric = (up - down) / (2.0 * opts.h);
        let a = g[idx];
        let rel = (a - numeric).abs() / (a.abs() + opts.floor);
        report.coords_checked += 1;
        if rel > report.max_rel_err || report.worst_path.is_empty() {
            report.max_rel_err = rel.max(report.max_rel_err);
            report.worst_path = store.get(*id).path.clone();
            report.worst_index = idx;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric("finite_diff_check", format!("loss is {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, ParamLayout, ParamStore};

    #[test]
    fn quadratic_is_exact() {
        let mut layout = ParamLayout::new();
        let w = layout.add("w", &[5], Init::Normal(1.0));
        let store = ParamStore::from_layout(&layout, 3);
        let r = finite_diff_check(
            |s| {
                let wv = s.p(w);
                let sq = s.square(wv)?;
                let t = s.sum_all(sq)?;
                s.scale(t, 0.5)
            },
            &store,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn rejects_step_out_of_range() {
        let mut layout = ParamLayout::new();
        let w = layout.add("w", &[1], Init::Ones);
        let store = ParamStore::from_layout(&layout, 0);
        let opts = GradCheckOptions {
            h: 1e-2,
            ..Default::default()
        };
        assert!(finite_diff_check(|s| Ok(s.p(w)), &store, &opts).is_err());
    }
}
