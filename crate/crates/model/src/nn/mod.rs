//! Neural building blocks: linear maps, layer normalization, depthwise
//! separable 3D convolution, trilinear resampling, and the patch operations
//! that move between voxel and token resolution.

pub mod conv;
pub mod grid;
pub mod linear;
pub mod norm;
pub mod patch;
pub mod sample;

pub use conv::{depthwise_conv3d, depthwise_separable_conv3d, ConvKernel3D};
pub use grid::TokenGrid;
pub use linear::linear;
pub use norm::layer_norm;
pub use patch::{patch_embed, patch_expand, patch_merge};
pub use sample::{identity_coords, trilinear_sample};
