//! Master-branch sequence encoders.

pub mod bilstm;
pub mod ssm;

pub use bilstm::BiLstm;
pub use ssm::{Ssm, SsmTrace};
