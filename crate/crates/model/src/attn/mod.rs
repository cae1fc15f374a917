//! Window partitioning, windowed self- and cross-attention, and the
//! offset-driven warp that aligns the key stream before matching.

pub mod attention;
pub mod deform;
pub mod params;
pub mod window;

pub use attention::{w_mca, w_msa};
pub use deform::{
    deform_features, deformable_cross_attention, predict_offsets, windowed_cross_attention,
};
pub use params::{relative_bias_indices, AttentionParams, ValueSource};
pub use window::{window_partition, window_reverse, WindowSet};
