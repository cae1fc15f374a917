//! Volume container format, preprocessing, and a synthetic paired-modality
//! case generator whose two channels are individually insufficient: one has
//! geometry without class identity, the other class identity without crisp
//! aligned geometry.

pub mod error;
pub mod manifest;
pub mod mvol;
pub mod preprocess;
pub mod split;
pub mod synth;
pub mod types;

pub use error::{DataError, Result};
pub use manifest::{case_paths, load_case, save_case, Manifest, MANIFEST_NAME};
pub use mvol::{read_labels, read_mvol, read_volume, write_labels, write_mvol, write_volume, MvolObject};
pub use preprocess::{
    crop_labels, crop_volume, normalize_intensity, pad_labels, pad_volume, PadPlan,
};
pub use split::{make_split, DatasetSplit};
pub use synth::{synth_case, synth_case_misaligned, DEFAULT_MISALIGN};
pub use types::{CasePair, LabelMap, Modality, Volume};
