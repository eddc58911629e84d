use super::graph::{dims3, focal_pt, BinKind, Graph, NormAxes, Op, UnaryKind, Var, FOCAL_EPS};
use super::kernels;
use crate::error::{Error, Result};

/// Gradients of one backward sweep, indexed by graph node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require gradients or does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn acc(slot: &mut Option<Vec<f64>>, n: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; n])
}

impl Graph {
    /// Reverse sweep from a scalar `loss`. Nodes are visited in exact
    /// reverse execution order; contributions accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.numel()
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let da = acc(&mut grads[a.0], m * k);
                    kernels::gemm_nt_acc(g, self.value(*b).data(), da, m, n, k);
                }
                if self.wants(*b) {
                    let db = acc(&mut grads[b.0], k * n);
                    kernels::gemm_tn_acc(self.value(*a).data(), g, db, m, k, n);
                }
            }
            Op::Linear { x, w } => {
                let sw = self.shape(*w);
                let (k, n) = (sw[0], sw[1]);
                let rows = self.numel(*x) / k;
                if self.wants(*x) {
                    let dx = acc(&mut grads[x.0], rows * k);
                    kernels::gemm_nt_acc(g, self.value(*w).data(), dx, rows, n, k);
                }
                if self.wants(*w) {
                    let dw = acc(&mut grads[w.0], k * n);
                    kernels::gemm_tn_acc(self.value(*x).data(), g, dw, rows, k, n);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let da = acc(&mut grads[a.0], batch * m * k);
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bv[i * k * n..(i + 1) * k * n];
                        let dai = &mut da[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            // a·bᵀ, b [n×k]: da = g·b
                            kernels::gemm_acc(gi, bi, dai, m, n, k);
                        } else {
                            // b [k×n]: da = g·bᵀ
                            kernels::gemm_nt_acc(gi, bi, dai, m, n, k);
                        }
                    }
                }
                if self.wants(*b) {
                    let db = acc(&mut grads[b.0], batch * k * n);
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // db [n×k] = gᵀ·a
                            kernels::gemm_tn_acc(gi, ai, dbi, m, n, k);
                        } else {
                            // db [k×n] = aᵀ·g
                            kernels::gemm_tn_acc(ai, gi, dbi, m, k, n);
                        }
                    }
                }
            }
            Op::Binary { a, b, kind, bc } => {
                let (wa, wb) = (self.wants(*a), self.wants(*b));
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut da = wa.then(|| vec![0.0; av.len()]);
                let mut db = wb.then(|| vec![0.0; bv.len()]);
                let [o0, o1, o2] = bc.out3;
                let mut gi = 0;
                for i0 in 0..o0 {
                    for i1 in 0..o1 {
                        let abase = i0 * bc.astr[0] + i1 * bc.astr[1];
                        let bbase = i0 * bc.bstr[0] + i1 * bc.bstr[1];
                        for i2 in 0..o2 {
                            let ai = abase + i2 * bc.astr[2];
                            let bi = bbase + i2 * bc.bstr[2];
                            let gv = g[gi];
                            gi += 1;
                            let (ga, gb) = match kind {
                                BinKind::Add => (gv, gv),
                                BinKind::Sub => (gv, -gv),
                                BinKind::Mul => (gv * bv[bi], gv * av[ai]),
                            };
                            if let Some(d) = da.as_mut() {
                                d[ai] += ga;
                            }
                            if let Some(d) = db.as_mut() {
                                d[bi] += gb;
                            }
                        }
                    }
                }
                if let Some(d) = da {
                    add_into(acc(&mut grads[a.0], av.len()), &d);
                }
                if let Some(d) = db {
                    add_into(acc(&mut grads[b.0], bv.len()), &d);
                }
            }
            Op::Affine { x, mul } => {
                let dx = acc(&mut grads[x.0], g.len());
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv * mul;
                }
            }
            Op::Unary { x, kind } => {
                let xv = self.value(*x).data();
                let dx = acc(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    let (xi, yi) = (xv[i], y[i]);
                    let dydx = match kind {
                        UnaryKind::Sigmoid => yi * (1.0 - yi),
                        UnaryKind::Tanh => 1.0 - yi * yi,
                        UnaryKind::Gelu => kernels::gelu_grad(xi),
                        UnaryKind::Relu => {
                            if xi > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Silu => {
                            let s = kernels::sigmoid(xi);
                            s * (1.0 + xi * (1.0 - s))
                        }
                        UnaryKind::Exp => yi,
                        UnaryKind::Log => 1.0 / xi,
                        UnaryKind::Square => 2.0 * xi,
                        UnaryKind::Sqrt => 0.5 / yi,
                        UnaryKind::Recip => -yi * yi,
                    };
                    dx[i] += g[i] * dydx;
                }
            }
            Op::Softmax { x, scale } => {
                let n = *self.shape(*x).last().unwrap();
                let dx = acc(&mut grads[x.0], g.len());
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] += scale * yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LogSoftmax { x } => {
                let n = *self.shape(*x).last().unwrap();
                let dx = acc(&mut grads[x.0], g.len());
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..n {
                        dr[j] += gr[j] - yr[j].exp() * gsum;
                    }
                }
            }
            Op::LogSoftmaxOffDiag { x } => {
                let n = dims3(self.shape(*x))[2];
                let dx = acc(&mut grads[x.0], g.len());
                for (r, ((yr, gr), dr)) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)).enumerate() {
                    let i = r % n;
                    let gsum: f64 = gr.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
                    for j in 0..n {
                        if j != i {
                            dr[j] += gr[j] - yr[j].exp() * gsum;
                        }
                    }
                }
            }
            Op::Conv1d { x, w, geom } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.wants(*x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0; wv.len()]);
                kernels::conv1d_backward(xv, wv, g, *geom, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(d) = dx {
                    add_into(acc(&mut grads[x.0], xv.len()), &d);
                }
                if let Some(d) = dw {
                    add_into(acc(&mut grads[w.0], wv.len()), &d);
                }
            }
            Op::Depthwise { x, w, geom, dynamic } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.wants(*x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0; wv.len()]);
                let (c, k) = (geom.c_in, geom.k);
                if *dynamic {
                    let kidx = |b: usize, j: usize, ch: usize| (b * c + ch) * k + j;
                    kernels::depthwise_backward(xv, wv, g, *geom, kidx, dx.as_deref_mut(), dw.as_deref_mut());
                } else {
                    let kidx = |_: usize, j: usize, ch: usize| j * c + ch;
                    kernels::depthwise_backward(xv, wv, g, *geom, kidx, dx.as_deref_mut(), dw.as_deref_mut());
                }
                if let Some(d) = dx {
                    add_into(acc(&mut grads[x.0], xv.len()), &d);
                }
                if let Some(d) = dw {
                    add_into(acc(&mut grads[w.0], wv.len()), &d);
                }
            }
            Op::Standardize { x, axes, inv_std } => {
                let [b, l, c] = dims3(self.shape(*x));
                let dx = acc(&mut grads[x.0], g.len());
                match axes {
                    NormAxes::Channels => {
                        for r in 0..b * l {
                            let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                            let gm = gr.iter().sum::<f64>() / c as f64;
                            let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                            for j in 0..c {
                                dx[r * c + j] += inv_std[r] * (gr[j] - gm - yr[j] * gy);
                            }
                        }
                    }
                    NormAxes::BatchLength => {
                        let n = (b * l) as f64;
                        let mut gm = vec![0.0; c];
                        let mut gy = vec![0.0; c];
                        for r in 0..b * l {
                            for j in 0..c {
                                gm[j] += g[r * c + j];
                                gy[j] += g[r * c + j] * y[r * c + j];
                            }
                        }
                        for r in 0..b * l {
                            for j in 0..c {
                                let i = r * c + j;
                                dx[i] += inv_std[j] * (g[i] - gm[j] / n - y[i] * gy[j] / n);
                            }
                        }
                    }
                }
            }
            Op::MeanLen { x } => {
                let [b, l, c] = dims3(self.shape(*x));
                let dx = acc(&mut grads[x.0], b * l * c);
                for bi in 0..b {
                    for t in 0..l {
                        for ch in 0..c {
                            dx[(bi * l + t) * c + ch] += g[bi * c + ch] / l as f64;
                        }
                    }
                }
            }
            Op::MeanChan { x } => {
                let c = *self.shape(*x).last().unwrap();
                let dx = acc(&mut grads[x.0], g.len() * c);
                for (r, gv) in g.iter().enumerate() {
                    for d in &mut dx[r * c..(r + 1) * c] {
                        *d += gv / c as f64;
                    }
                }
            }
            Op::SumAll { x } => {
                let n = self.numel(*x);
                let dx = acc(&mut grads[x.0], n);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Concat { xs, axis3 } => {
                let d0 = dims3(self.shape(xs[0]));
                let outer: usize = d0[..*axis3].iter().product();
                let inner: usize = d0[*axis3 + 1..].iter().product();
                let total: usize = xs.iter().map(|v| dims3(self.shape(*v))[*axis3]).sum();
                let mut off = 0;
                for v in xs {
                    let ext = dims3(self.shape(*v))[*axis3];
                    if self.wants(*v) {
                        let dv = acc(&mut grads[v.0], outer * ext * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + off) * inner..(o * total + off + ext) * inner];
                            add_into(&mut dv[o * ext * inner..(o + 1) * ext * inner], src);
                        }
                    }
                    off += ext;
                }
            }
            Op::Slice { x, axis3, start } => {
                let d = dims3(self.shape(*x));
                let len = dims3(node.value.shape())[*axis3];
                let outer: usize = d[..*axis3].iter().product();
                let inner: usize = d[*axis3 + 1..].iter().product();
                let dx = acc(&mut grads[x.0], d.iter().product());
                for o in 0..outer {
                    let base = (o * d[*axis3] + start) * inner;
                    add_into(&mut dx[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                }
            }
            Op::Reshape { x } => {
                add_into(acc(&mut grads[x.0], g.len()), g);
            }
            Op::Scan { a, v } => {
                let [b, l, c] = dims3(self.shape(*a));
                let av = self.value(*a).data();
                // adjoint: λ_t = g_t + a_{t+1} λ_{t+1}
                let mut lam = vec![0.0; g.len()];
                for bi in 0..b {
                    for t in (0..l).rev() {
                        let off = (bi * l + t) * c;
                        for ch in 0..c {
                            let next = if t + 1 < l { av[off + c + ch] * lam[off + c + ch] } else { 0.0 };
                            lam[off + ch] = g[off + ch] + next;
                        }
                    }
                }
                if self.wants(*v) {
                    add_into(acc(&mut grads[v.0], g.len()), &lam);
                }
                if self.wants(*a) {
                    let da = acc(&mut grads[a.0], g.len());
                    for bi in 0..b {
                        for t in 1..l {
                            let off = (bi * l + t) * c;
                            for ch in 0..c {
                                da[off + ch] += lam[off + ch] * y[off - c + ch];
                            }
                        }
                    }
                }
            }
            Op::DotConst { x, w } => {
                let dx = acc(&mut grads[x.0], w.len());
                for (d, wv) in dx.iter_mut().zip(w) {
                    *d += g[0] * wv;
                }
            }
            Op::Focal { x, labels, gamma, alpha } => {
                let xv = self.value(*x).data();
                let n = xv.len() as f64;
                let dx = acc(&mut grads[x.0], xv.len());
                for (i, (&l, &lab)) in xv.iter().zip(labels).enumerate() {
                    let q = focal_pt(l, lab);
                    if !(FOCAL_EPS..=1.0 - FOCAL_EPS).contains(&q) {
                        continue;
                    }
                    let om = 1.0 - q;
                    // dL/dq for L = −α (1−q)^γ ln q
                    let dldq = -alpha * (om.powf(*gamma) / q - gamma * om.powf(gamma - 1.0) * q.ln());
                    let sign = if lab == 1.0 { 1.0 } else { -1.0 };
                    dx[i] += g[0] * dldq * sign * q * om / n;
                }
            }
            Op::WeightedBce { x, labels, pos_weight } => {
                let xv = self.value(*x).data();
                let n = xv.len() as f64;
                let dx = acc(&mut grads[x.0], xv.len());
                for (i, (&l, &lab)) in xv.iter().zip(labels).enumerate() {
                    let p = kernels::sigmoid(l);
                    let d = lab * pos_weight * (p - 1.0) + (1.0 - lab) * p;
                    dx[i] += g[0] * d / n;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
