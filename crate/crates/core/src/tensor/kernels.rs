// Raw loops over row-major slices. No allocation beyond the output buffers.

/// c[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let brow = &b[r * n..(r + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub len: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub dilation: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.dilation * (self.k - 1) / 2) as isize
    }

    fn src(&self, t: usize, j: usize) -> Option<usize> {
        let s = t as isize + (self.dilation * j) as isize - self.pad();
        (s >= 0 && (s as usize) < self.len).then_some(s as usize)
    }
}

/// Dense "same" convolution. x [B×L×Cin], w [k×Cin×Cout] → y [B×L×Cout].
pub(crate) fn conv1d(x: &[f64], w: &[f64], g: ConvGeom) -> Vec<f64> {
    let ConvGeom {
        batch,
        len,
        c_in,
        c_out,
        k,
        ..
    } = g;
    let mut y = vec![0.0; batch * len * c_out];
    for b in 0..batch {
        for t in 0..len {
            let yrow = &mut y[(b * len + t) * c_out..(b * len + t + 1) * c_out];
            for j in 0..k {
                let Some(s) = g.src(t, j) else { continue };
                let xrow = &x[(b * len + s) * c_in..(b * len + s + 1) * c_in];
                let wj = &w[j * c_in * c_out..(j + 1) * c_in * c_out];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &wj[c * c_out..(c + 1) * c_out];
                    for (yv, &wv) in yrow.iter_mut().zip(wrow) {
                        *yv += xv * wv;
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv1d`]; either output may be skipped.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: ConvGeom,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
) {
    let ConvGeom {
        batch,
        len,
        c_in,
        c_out,
        k,
        ..
    } = g;
    for b in 0..batch {
        for t in 0..len {
            let grow = &gy[(b * len + t) * c_out..(b * len + t + 1) * c_out];
            for j in 0..k {
                let Some(s) = g.src(t, j) else { continue };
                let xoff = (b * len + s) * c_in;
                let woff = j * c_in * c_out;
                for c in 0..c_in {
                    let wrow = &w[woff + c * c_out..woff + (c + 1) * c_out];
                    if let Some(dx) = dx.as_deref_mut() {
                        let mut acc = 0.0;
                        for (gv, wv) in grow.iter().zip(wrow) {
                            acc += gv * wv;
                        }
                        dx[xoff + c] += acc;
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        let xv = x[xoff + c];
                        if xv != 0.0 {
                            let dwrow = &mut dw[woff + c * c_out..woff + (c + 1) * c_out];
                            for (d, gv) in dwrow.iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Depthwise "same" convolution. Kernel index is `kidx(b, j, c)` so the
/// same loop serves static `[k×C]` and per-sample `[B×C×k]` kernels.
pub(crate) fn depthwise(
    x: &[f64],
    w: &[f64],
    g: ConvGeom,
    kidx: impl Fn(usize, usize, usize) -> usize,
) -> Vec<f64> {
    let ConvGeom { batch, len, c_in, k, .. } = g;
    let mut y = vec![0.0; batch * len * c_in];
    for b in 0..batch {
        for t in 0..len {
            let yoff = (b * len + t) * c_in;
            for j in 0..k {
                let Some(s) = g.src(t, j) else { continue };
                let xoff = (b * len + s) * c_in;
                for c in 0..c_in {
                    y[yoff + c] += x[xoff + c] * w[kidx(b, j, c)];
                }
            }
        }
    }
    y
}

pub(crate) fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: ConvGeom,
    kidx: impl Fn(usize, usize, usize) -> usize,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
) {
    let ConvGeom { batch, len, c_in, k, .. } = g;
    for b in 0..batch {
        for t in 0..len {
            let goff = (b * len + t) * c_in;
            for j in 0..k {
                let Some(s) = g.src(t, j) else { continue };
                let xoff = (b * len + s) * c_in;
                for c in 0..c_in {
                    let gv = gy[goff + c];
                    let wi = kidx(b, j, c);
                    if let Some(dx) = dx.as_deref_mut() {
                        dx[xoff + c] += gv * w[wi];
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[wi] += gv * x[xoff + c];
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + eˣ) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree_with_triple_loop() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(&a, &b, 3, 4, 5);

        let mut c = vec![0.0; 15];
        gemm_acc(&a, &b, &mut c, 3, 4, 5);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-14));

        // bᵀ laid out as [5×4]
        let mut bt = vec![0.0; 20];
        for p in 0..4 {
            for j in 0..5 {
                bt[j * 4 + p] = b[p * 5 + j];
            }
        }
        let mut c2 = vec![0.0; 15];
        gemm_nt_acc(&a, &bt, &mut c2, 3, 4, 5);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-14));

        // aᵀ laid out as [4×3]; (aᵀ)ᵀ · b
        let mut at = vec![0.0; 12];
        for i in 0..3 {
            for p in 0..4 {
                at[p * 3 + i] = a[i * 4 + p];
            }
        }
        let mut c3 = vec![0.0; 15];
        gemm_tn_acc(&at, &b, &mut c3, 4, 3, 5);
        assert!(c3.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}
