use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Which axes a standardization reduces over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormAxes {
    /// Per position, over channels (layer norm).
    Channels,
    /// Per channel, over batch and length (batch norm).
    BatchLength,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Sigmoid,
    Tanh,
    Gelu,
    Relu,
    Silu,
    Exp,
    Log,
    Square,
    Sqrt,
    Recip,
}

#[derive(Clone, Debug)]
pub(crate) struct Bcast {
    pub out3: [usize; 3],
    pub astr: [usize; 3],
    pub bstr: [usize; 3],
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, w: Var },
    Bmm { a: Var, b: Var, trans_b: bool },
    Binary { a: Var, b: Var, kind: BinKind, bc: Bcast },
    Affine { x: Var, mul: f64 },
    Unary { x: Var, kind: UnaryKind },
    Softmax { x: Var, scale: f64 },
    LogSoftmax { x: Var },
    LogSoftmaxOffDiag { x: Var },
    Conv1d { x: Var, w: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, geom: ConvGeom, dynamic: bool },
    Standardize { x: Var, axes: NormAxes, inv_std: Vec<f64> },
    MeanLen { x: Var },
    MeanChan { x: Var },
    SumAll { x: Var },
    Concat { xs: Vec<Var>, axis3: usize },
    Slice { x: Var, axis3: usize, start: usize },
    Reshape { x: Var },
    Scan { a: Var, v: Var },
    DotConst { x: Var, w: Vec<f64> },
    Focal { x: Var, labels: Vec<f64>, gamma: f64, alpha: f64 },
    WeightedBce { x: Var, labels: Vec<f64>, pos_weight: f64 },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b } | Bmm { a, b, .. } | Binary { a, b, .. } => vec![*a, *b],
            Linear { x, w } | Conv1d { x, w, .. } | Depthwise { x, w, .. } => vec![*x, *w],
            Scan { a, v } => vec![*a, *v],
            Concat { xs, .. } => xs.clone(),
            Affine { x, .. }
            | Unary { x, .. }
            | Softmax { x, .. }
            | LogSoftmax { x }
            | LogSoftmaxOffDiag { x }
            | Standardize { x, .. }
            | MeanLen { x }
            | MeanChan { x }
            | SumAll { x }
            | Slice { x, .. }
            | Reshape { x }
            | DotConst { x, .. }
            | Focal { x, .. }
            | WeightedBce { x, .. } => vec![*x],
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Records every executed primitive so a single reverse sweep can produce
/// gradients. Nodes are appended in execution order.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// Pads a shape on the left to rank 3.
pub(crate) fn dims3(shape: &[usize]) -> [usize; 3] {
    let mut d = [1; 3];
    let off = 3 - shape.len();
    d[off..].copy_from_slice(shape);
    d
}

fn contiguous_strides(d: [usize; 3]) -> [usize; 3] {
    [d[1] * d[2], d[2], 1]
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                name,
                format!("non-finite output {} at flat index {i}", data[i]),
            ));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- products -------------------------------------------------------

    /// Plain matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b })
    }

    /// Applies `w [k×n]` to the last axis of `x [..×k]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let k = *sx.last().unwrap();
        if sw.len() != 2 || sw[0] != k {
            return Err(Error::Dimension {
                op: "linear",
                lhs: sx,
                rhs: sw,
            });
        }
        let n = sw[1];
        let rows = self.value(x).numel() / k;
        let mut out = vec![0.0; rows * n];
        kernels::gemm_acc(self.value(x).data(), self.value(w).data(), &mut out, rows, k, n);
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        self.push("linear", shape, out, Op::Linear { x, w })
    }

    /// `x·w + b` with `b` broadcast over rows.
    pub fn affine_map(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.linear(x, w)?;
        self.add(y, b)
    }

    /// Batched product `a [B×M×K] · b [B×K×N]`, or `a · bᵀ` for `b [B×N×K]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::Dimension {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let kb = if trans_b { sb[2] } else { sb[1] };
        if kb != k {
            return Err(bad());
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let ai = &av[i * m * k..(i + 1) * m * k];
            let bi = &bv[i * k * n..(i + 1) * k * n];
            let oi = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                kernels::gemm_nt_acc(ai, bi, oi, m, k, n);
            } else {
                kernels::gemm_acc(ai, bi, oi, m, k, n);
            }
        }
        self.push("bmm", vec![batch, m, n], out, Op::Bmm { a, b, trans_b })
    }

    // ---- broadcasting elementwise ----------------------------------------

    fn broadcast(&self, op: &'static str, a: Var, b: Var, col: bool) -> Result<(Vec<usize>, Bcast)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let err = || Error::Dimension {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        let (da, db) = (dims3(sa), dims3(sb));
        let mut out3 = [1; 3];
        for ax in 0..2 {
            out3[ax] = match (da[ax], db[ax]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(err()),
            };
        }
        if col {
            if db[2] != 1 {
                return Err(err());
            }
            out3[2] = da[2];
        } else {
            if da[2] != db[2] {
                return Err(err());
            }
            out3[2] = da[2];
        }
        let stride = |d: [usize; 3]| {
            let s = contiguous_strides(d);
            let mut r = [0; 3];
            for ax in 0..3 {
                r[ax] = if d[ax] == 1 { 0 } else { s[ax] };
            }
            r
        };
        let rank = sa.len().max(sb.len());
        let shape = out3[3 - rank..].to_vec();
        Ok((
            shape,
            Bcast {
                out3,
                astr: stride(da),
                bstr: stride(db),
            },
        ))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, kind: BinKind, col: bool) -> Result<Var> {
        let (shape, bc) = self.broadcast(name, a, b, col)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let [o0, o1, o2] = bc.out3;
        let mut out = Vec::with_capacity(o0 * o1 * o2);
        for i0 in 0..o0 {
            for i1 in 0..o1 {
                let abase = i0 * bc.astr[0] + i1 * bc.astr[1];
                let bbase = i0 * bc.bstr[0] + i1 * bc.bstr[1];
                for i2 in 0..o2 {
                    let x = av[abase + i2 * bc.astr[2]];
                    let y = bv[bbase + i2 * bc.bstr[2]];
                    out.push(match kind {
                        BinKind::Add => x + y,
                        BinKind::Sub => x - y,
                        BinKind::Mul => x * y,
                    });
                }
            }
        }
        self.push(name, shape, out, Op::Binary { a, b, kind, bc })
    }

    /// Elementwise sum; broadcasting only over the batch and length axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, BinKind::Add, false)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, BinKind::Sub, false)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, BinKind::Mul, false)
    }

    /// Multiplies every channel of `x` by the single-channel `s [..×1]`.
    /// A `[B×1×1]` or `[1]` operand scales whole samples or the whole tensor.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        self.binary("mul_col", x, s, BinKind::Mul, true)
    }

    /// `x·mul + add` with constant coefficients.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * mul + add).collect();
        let shape = self.shape(x).to_vec();
        self.push("affine", shape, data, Op::Affine { x, mul })
    }

    pub fn scale(&mut self, x: Var, by: f64) -> Result<Var> {
        self.affine(x, by, 0.0)
    }

    /// `1 − x`
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 1.0)
    }

    /// Convex blend `g ⊙ a + (1 − g) ⊙ b`, written as `b + g ⊙ (a − b)`.
    pub fn gate_blend(&mut self, g: Var, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let gd = self.mul(g, d)?;
        self.add(b, gd)
    }

    // ---- unary -----------------------------------------------------------

    fn unary(&mut self, name: &'static str, x: Var, kind: UnaryKind) -> Result<Var> {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Sigmoid => kernels::sigmoid,
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Gelu => kernels::gelu,
            UnaryKind::Relu => |v| v.max(0.0),
            UnaryKind::Silu => |v| v * kernels::sigmoid(v),
            UnaryKind::Exp => f64::exp,
            UnaryKind::Log => f64::ln,
            UnaryKind::Square => |v| v * v,
            UnaryKind::Sqrt => f64::sqrt,
            UnaryKind::Recip => |v| 1.0 / v,
        };
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, data, Op::Unary { x, kind })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, UnaryKind::Sigmoid)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, UnaryKind::Tanh)
    }
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, UnaryKind::Gelu)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, UnaryKind::Relu)
    }
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary("silu", x, UnaryKind::Silu)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, UnaryKind::Exp)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, UnaryKind::Log)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, UnaryKind::Square)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, UnaryKind::Sqrt)
    }
    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary("recip", x, UnaryKind::Recip)
    }

    // ---- softmax ---------------------------------------------------------

    /// Softmax over the last axis of `scale · x`, computed with max-subtraction.
    pub fn softmax_lastdim(&mut self, x: Var, scale: f64) -> Result<Var> {
        if !(scale > 0.0) {
            return Err(Error::config(format!("softmax scale must be positive, got {scale}")));
        }
        let xv = self.value(x);
        if xv.data().iter().any(|v| v.is_nan()) {
            return Err(Error::numeric("softmax", "NaN input"));
        }
        let n = *xv.shape().last().unwrap();
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(n) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let start = out.len();
            let mut sum = 0.0;
            for &v in row {
                let e = (scale * (v - max)).exp();
                sum += e;
                out.push(e);
            }
            for e in &mut out[start..] {
                *e /= sum;
            }
        }
        let shape = xv.shape().to_vec();
        self.push("softmax", shape, out, Op::Softmax { x, scale })
    }

    /// Log-softmax over the last axis, stable for arbitrarily spread logits.
    pub fn log_softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|v| v.is_nan()) {
            return Err(Error::numeric("log_softmax", "NaN input"));
        }
        let n = *xv.shape().last().unwrap();
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(n) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let shape = xv.shape().to_vec();
        self.push("log_softmax", shape, out, Op::LogSoftmax { x })
    }

    /// Row-wise log-softmax of a square `[.., N, N]` matrix where row `i`
    /// excludes column `i` from its normalizer; diagonal outputs are 0.
    pub fn log_softmax_off_diag(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = dims3(&shape);
        if d[1] != d[2] {
            return Err(Error::shape("log_softmax_off_diag", format!("matrix must be square, got {shape:?}")));
        }
        let n = d[2];
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for (r, row) in xv.chunks(n).enumerate() {
            let i = r % n;
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v));
            if max == f64::NEG_INFINITY {
                continue;
            }
            let lse = max
                + row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &v)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            for (j, &v) in row.iter().enumerate() {
                if j != i {
                    out[r * n + j] = v - lse;
                }
            }
        }
        self.push("log_softmax_off_diag", shape, out, Op::LogSoftmaxOffDiag { x })
    }

    // ---- convolutions ----------------------------------------------------

    fn conv_geom(&self, op: &'static str, x: Var, k: usize, dilation: usize) -> Result<ConvGeom> {
        if k.is_multiple_of(2) {
            return Err(Error::config(format!("{op}: kernel size must be odd, got {k}")));
        }
        if dilation == 0 {
            return Err(Error::config(format!("{op}: dilation must be >= 1")));
        }
        let sx = self.shape(x);
        if sx.len() != 3 {
            return Err(Error::shape(op, format!("input must be [B×L×C], got {sx:?}")));
        }
        Ok(ConvGeom {
            batch: sx[0],
            len: sx[1],
            c_in: sx[2],
            c_out: sx[2],
            k,
            dilation,
        })
    }

    /// Zero-padded, stride-1, length-preserving convolution.
    /// `x [B×L×Cin]`, `w [k×Cin×Cout]` → `[B×L×Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 3 {
            return Err(Error::shape("conv1d", format!("kernel must be [k×Cin×Cout], got {sw:?}")));
        }
        let mut geom = self.conv_geom("conv1d", x, sw[0], dilation)?;
        if sw[1] != geom.c_in {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: self.shape(x).to_vec(),
                rhs: sw,
            });
        }
        geom.c_out = sw[2];
        let y = kernels::conv1d(self.value(x).data(), self.value(w).data(), geom);
        self.push("conv1d", vec![geom.batch, geom.len, geom.c_out], y, Op::Conv1d { x, w, geom })
    }

    /// Per-channel convolution with a shared kernel `w [k×C]`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 {
            return Err(Error::shape("depthwise_conv1d", format!("kernel must be [k×C], got {sw:?}")));
        }
        let geom = self.conv_geom("depthwise_conv1d", x, sw[0], 1)?;
        if sw[1] != geom.c_in {
            return Err(Error::Dimension {
                op: "depthwise_conv1d",
                lhs: self.shape(x).to_vec(),
                rhs: sw,
            });
        }
        let c = geom.c_in;
        let y = kernels::depthwise(self.value(x).data(), self.value(w).data(), geom, |_, j, ch| j * c + ch);
        let shape = self.shape(x).to_vec();
        self.push("depthwise_conv1d", shape, y, Op::Depthwise { x, w, geom, dynamic: false })
    }

    /// Per-channel convolution with a per-sample kernel `w [B×C×k]`.
    pub fn dynamic_depthwise_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 3 {
            return Err(Error::shape("dynamic_depthwise_conv1d", format!("kernel must be [B×C×k], got {sw:?}")));
        }
        let geom = self.conv_geom("dynamic_depthwise_conv1d", x, sw[2], 1)?;
        if sw[0] != geom.batch || sw[1] != geom.c_in {
            return Err(Error::Dimension {
                op: "dynamic_depthwise_conv1d",
                lhs: self.shape(x).to_vec(),
                rhs: sw,
            });
        }
        let (c, k) = (geom.c_in, geom.k);
        let y = kernels::depthwise(self.value(x).data(), self.value(w).data(), geom, |b, j, ch| {
            (b * c + ch) * k + j
        });
        let shape = self.shape(x).to_vec();
        self.push("dynamic_depthwise_conv1d", shape, y, Op::Depthwise { x, w, geom, dynamic: true })
    }

    // ---- normalization and pooling -------------------------------------

    /// Subtracts the mean and divides by `sqrt(var + eps)` over `axes`.
    pub fn standardize(&mut self, x: Var, axes: NormAxes, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::config(format!("normalization eps must be positive, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let [b, l, c] = dims3(&shape);
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        let inv_std = match axes {
            NormAxes::Channels => {
                let mut inv = Vec::with_capacity(b * l);
                for (row, orow) in xv.chunks(c).zip(out.chunks_mut(c)) {
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                    let is = 1.0 / (var + eps).sqrt();
                    for (o, v) in orow.iter_mut().zip(row) {
                        *o = (v - mean) * is;
                    }
                    inv.push(is);
                }
                inv
            }
            NormAxes::BatchLength => {
                let n = (b * l) as f64;
                let mut mean = vec![0.0; c];
                for row in xv.chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; c];
                for row in xv.chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m).powi(2);
                    }
                }
                let inv: Vec<f64> = var.iter().map(|s| 1.0 / (s / n + eps).sqrt()).collect();
                for (row, orow) in xv.chunks(c).zip(out.chunks_mut(c)) {
                    for ch in 0..c {
                        orow[ch] = (row[ch] - mean[ch]) * inv[ch];
                    }
                }
                inv
            }
        };
        self.push("standardize", shape, out, Op::Standardize { x, axes, inv_std })
    }

    /// Layer norm over channels with affine `gain`, `bias` of shape `[C]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.standardize(x, NormAxes::Channels, eps)?;
        let s = self.mul(n, gain)?;
        self.add(s, bias)
    }

    /// Mean over the length axis: `[B×L×C]` → `[B×1×C]`.
    pub fn mean_len(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("mean_len", format!("need a length axis, got {shape:?}")));
        }
        let [b, l, c] = dims3(&shape);
        let xv = self.value(x).data();
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for t in 0..l {
                let row = &xv[(bi * l + t) * c..(bi * l + t + 1) * c];
                for (o, v) in out[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= l as f64);
        let mut oshape = shape;
        let r = oshape.len();
        oshape[r - 2] = 1;
        self.push("mean_len", oshape, out, Op::MeanLen { x })
    }

    /// Mean over channels: `[B×L×C]` → `[B×L×1]`.
    pub fn mean_channels(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        let out = self
            .value(x)
            .data()
            .chunks(c)
            .map(|r| r.iter().sum::<f64>() / c as f64)
            .collect();
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = 1;
        self.push("mean_channels", oshape, out, Op::MeanChan { x })
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum_all", vec![1], vec![s], Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum of squares over the last axis: `[..×C]` → `[..×1]`.
    pub fn sum_sq_lastdim(&mut self, x: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap() as f64;
        let sq = self.square(x)?;
        let m = self.mean_channels(sq)?;
        self.scale(m, c)
    }

    /// Rescales each row of the last axis to unit L2 norm.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let ss = self.sum_sq_lastdim(x)?;
        let ss = self.affine(ss, 1.0, eps)?;
        let n = self.sqrt(ss)?;
        let inv = self.recip(n)?;
        self.mul_col(x, inv)
    }

    // ---- shape manipulation ---------------------------------------------

    fn axis3(&self, op: &'static str, x: Var, axis: usize) -> Result<usize> {
        let r = self.shape(x).len();
        if axis >= r {
            return Err(Error::shape(op, format!("axis {axis} out of range for rank {r}")));
        }
        Ok(axis + 3 - r)
    }

    /// Concatenates equally ranked tensors along `axis`.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("concat", "nothing to concatenate"))?;
        let ax = self.axis3("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let d0 = dims3(&base);
        let outer: usize = d0[..ax].iter().product();
        let inner: usize = d0[ax + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let ext = dims3(self.shape(v))[ax];
                let data = self.value(v).data();
                out.extend_from_slice(&data[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", shape, out, Op::Concat { xs: xs.to_vec(), axis3: ax })
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ax = self.axis3("slice", x, axis)?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} exceeds extent {} on axis {axis}", start + len, shape[axis]),
            ));
        }
        let d = dims3(&shape);
        let outer: usize = d[..ax].iter().product();
        let inner: usize = d[ax + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * d[ax] + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.push("slice", oshape, out, Op::Slice { x, axis3: ax, start })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let (shape, data) = (t.shape().to_vec(), t.into_data());
        self.push("reshape", shape, data, Op::Reshape { x })
    }

    // ---- recurrences and losses -----------------------------------------

    /// Diagonal linear recurrence along the length axis:
    /// `h_t = a_t ⊙ h_{t−1} + v_t`, `h_{−1} = 0`. Linear in L.
    pub fn scan(&mut self, a: Var, v: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape != self.shape(v) || shape.len() != 3 {
            return Err(Error::Dimension {
                op: "scan",
                lhs: shape,
                rhs: self.shape(v).to_vec(),
            });
        }
        let [b, l, c] = dims3(&shape);
        let (av, vv) = (self.value(a).data(), self.value(v).data());
        let mut h = vec![0.0; av.len()];
        for bi in 0..b {
            for t in 0..l {
                let off = (bi * l + t) * c;
                for ch in 0..c {
                    let prev = if t == 0 { 0.0 } else { h[off - c + ch] };
                    h[off + ch] = av[off + ch] * prev + vv[off + ch];
                }
            }
        }
        self.push("scan", shape, h, Op::Scan { a, v })
    }

    /// Scalar `Σ xᵢ wᵢ` against constant weights.
    pub fn dot_const(&mut self, x: Var, w: Vec<f64>) -> Result<Var> {
        if w.len() != self.value(x).numel() {
            return Err(Error::Dimension {
                op: "dot_const",
                lhs: self.shape(x).to_vec(),
                rhs: vec![w.len()],
            });
        }
        let s = self.value(x).data().iter().zip(&w).map(|(a, b)| a * b).sum();
        self.push("dot_const", vec![1], vec![s], Op::DotConst { x, w })
    }

    fn check_labels(&self, op: &'static str, x: Var, labels: &[f64]) -> Result<()> {
        if labels.len() != self.value(x).numel() {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::usage(format!("{op}: labels must be 0 or 1")));
        }
        Ok(())
    }

    /// Batch-mean focal loss on logits, `−α(1−p_t)^γ log p_t`, with `p_t`
    /// clamped to `[1e-7, 1 − 1e-7]`.
    pub fn focal_loss(&mut self, logits: Var, labels: &[f64], gamma: f64, alpha: f64) -> Result<Var> {
        self.check_labels("focal_loss", logits, labels)?;
        let xv = self.value(logits).data();
        let n = xv.len() as f64;
        let total: f64 = xv
            .iter()
            .zip(labels)
            .map(|(&l, &y)| {
                let q = focal_pt(l, y).clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
                -alpha * (1.0 - q).powf(gamma) * q.ln()
            })
            .sum();
        let op = Op::Focal {
            x: logits,
            labels: labels.to_vec(),
            gamma,
            alpha,
        };
        self.push("focal_loss", vec![1], vec![total / n], op)
    }

    /// Batch-mean binary cross-entropy on logits with positive-class weight.
    pub fn weighted_bce(&mut self, logits: Var, labels: &[f64], pos_weight: f64) -> Result<Var> {
        self.check_labels("weighted_bce", logits, labels)?;
        let xv = self.value(logits).data();
        let n = xv.len() as f64;
        let total: f64 = xv
            .iter()
            .zip(labels)
            .map(|(&l, &y)| y * pos_weight * kernels::softplus(-l) + (1.0 - y) * kernels::softplus(l))
            .sum();
        let op = Op::WeightedBce {
            x: logits,
            labels: labels.to_vec(),
            pos_weight,
        };
        self.push("weighted_bce", vec![1], vec![total / n], op)
    }
}

pub(crate) const FOCAL_EPS: f64 = 1e-7;

/// Probability assigned to the true class.
pub(crate) fn focal_pt(logit: f64, label: f64) -> f64 {
    if label == 1.0 {
        kernels::sigmoid(logit)
    } else {
        kernels::sigmoid(-logit)
    }
}
