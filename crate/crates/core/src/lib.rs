//! SAR-guided optical image dehazing built on selective state-space scans.

pub mod check;
pub mod data;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod network;
pub mod ops;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use kernels::ConvSpec;
pub use tensor::{Scalar, Tensor};
