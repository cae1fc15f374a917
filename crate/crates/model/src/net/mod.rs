//! Network assembly: configuration, parameter inventory, block wiring, the
//! forward passes, and the archive format for trained weights.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod specs;
pub mod store;
pub mod variants;

pub use blocks::CrossKind;
pub use config::ModelConfig;
pub use model::ForwardOut;
pub use store::{BoundParams, InitKind, ParamSpec, ParameterStore};
pub use variants::{make_variant, variant_names, ModelVariant};
