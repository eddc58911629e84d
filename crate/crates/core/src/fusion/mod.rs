//! The five fusion blocks of the master/slave network.

pub mod bgca;
pub mod bhgfn;
pub mod common;
pub mod hdwf;
pub mod ldfn;
pub mod macp;

pub use bgca::{Bgca, BgcaTrace};
pub use bhgfn::{Bhgfn, BhgfnTrace};
pub use common::{Conv, Dense, LayerNorm};
pub use hdwf::{dynamic_temperature, Hdwf, HdwfTrace};
pub use ldfn::{Ldfn, LdfnKind, PairTrace, LDFN_INPUT_DIMS};
pub use macp::{BatchNorm, Macp, MacpTrace, SqueezeExcite};
