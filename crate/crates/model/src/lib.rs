//! Dual-stream segmentation network over the tensor core.
//!
//! One stream per modality, each a U-shaped stack of windowed self-attention
//! blocks; at every stage the streams exchange information through windowed
//! cross-attention whose key stream is first resampled along a learned offset
//! field. All learnable tensors live in a [`ParameterStore`] and every forward
//! pass builds a fresh tape, so gradients fall out of the core's backward
//! sweep.

pub mod attn;
pub mod error;
pub mod fdcheck;
pub mod net;
pub mod nn;

pub use error::{ModelError, Result};
pub use net::checkpoint::{load_store, save_store};
pub use net::config::{ModelConfig, ValueSource};
pub use net::store::ParameterStore;
pub use net::variants::{variant_names, ModelVariant};
pub use nn::grid::TokenGrid;
