//! Network assembly: parameters, layers, fusion blocks and the full model.

pub mod blocks;
pub mod layers;
pub mod model;
pub mod params;

pub use blocks::{DmBlock, Extract, Hpdm, JointGate, Pfm, SkFusion, Vss};
pub use model::{DehazeMamba, FusionBundle, ModelConfig, ModelOutput, Variant};
pub use params::{Builder, Ctx, ParamId, ParamStore};
