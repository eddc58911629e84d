use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamLayout, Session, Var};

/// Widths an auxiliary stream may be aligned to.
pub const ALIGN_TARGETS: [usize; 2] = [256, 512];

/// Linear projection to the target width followed by a residual
/// `GELU(depthwise k=3 conv)` block.
#[derive(Clone, Debug)]
pub struct AlignDims {
    pub d_in: usize,
    pub target: usize,
    w: ParamId,
    b: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
}

impl AlignDims {
    pub fn register(layout: &mut ParamLayout, prefix: &str, d_in: usize, target: usize) -> Result<Self> {
        if !ALIGN_TARGETS.contains(&target) {
            return Err(Error::config(format!("alignment target must be 256 or 512, got {target}")));
        }
        if d_in == 0 {
            return Err(Error::config("alignment input width must be positive"));
        }
        Ok(AlignDims {
            d_in,
            target,
            w: layout.add(format!("{prefix}.w"), &[d_in, target], Init::FanIn(d_in)),
            b: layout.add(format!("{prefix}.b"), &[target], Init::Zeros),
            conv_w: layout.add(format!("{prefix}.conv_w"), &[3, target], Init::FanIn(3)),
            conv_b: layout.add(format!("{prefix}.conv_b"), &[target], Init::Zeros),
        })
    }

    /// `x` is `[L×d_in]` or `[B×L×d_in]`; the output keeps the leading axes.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.shape(x).to_vec();
        if *shape.last().unwrap() != self.d_in || !(2..=3).contains(&shape.len()) {
            return Err(Error::Dimension {
                op: "align_dims",
                lhs: shape,
                rhs: vec![self.d_in],
            });
        }
        let (w, b, cw, cb) = (s.p(self.w), s.p(self.b), s.p(self.conv_w), s.p(self.conv_b));
        let x3 = if shape.len() == 2 {
            s.reshape(x, &[1, shape[0], shape[1]])?
        } else {
            x
        };
        let y = s.affine_map(x3, w, b)?;
        let c = s.depthwise_conv1d(y, cw)?;
        let c = s.add(c, cb)?;
        let c = s.gelu(c)?;
        let out = s.add(y, c)?;
        if shape.len() == 2 {
            s.reshape(out, &[shape[0], self.target])
        } else {
            Ok(out)
        }
    }
}
