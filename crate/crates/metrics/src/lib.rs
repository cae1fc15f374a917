//! Segmentation quality metrics: overlap scores by exact voxel counting and a
//! 95th-percentile symmetric surface distance, with fixed conventions for
//! degenerate masks so every value is total and deterministic.

pub mod error;
pub mod overlap;
pub mod report;
pub mod surface;

pub use error::{MetricsError, Result};
pub use overlap::{dice, miou, overlap_counts, overlap_counts_all, OverlapCounts};
pub use report::{report, ClassMetrics, MetricsReport};
pub use surface::{hd95, volume_diagonal};
