use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic, not a volume file")]
    BadMagic,

    #[error("unsupported file version {0}")]
    Version(u8),

    #[error("unknown kind byte {0}")]
    BadKind(u8),

    #[error("unknown dtype byte {0}")]
    BadDtype(u8),

    #[error("kind/dtype pair not allowed: kind {kind}, dtype {dtype}")]
    KindDtype { kind: u8, dtype: u8 },

    #[error("expected {expected} file, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("truncated file while reading {0}")]
    Truncated(&'static str),

    #[error("extent product overflows addressable size")]
    ExtentOverflow,

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("non-finite intensity at voxel {0}")]
    NonFinite(usize),

    #[error("degenerate extents {0:?}, every axis needs at least one voxel")]
    EmptyExtent([usize; 3]),

    #[error("payload holds {actual} values, extents {extents:?} need {expected}")]
    PayloadLength {
        extents: [usize; 3],
        expected: usize,
        actual: usize,
    },

    #[error("volumes of a case differ in extents: {0:?} vs {1:?}")]
    ExtentMismatch([usize; 3], [usize; 3]),

    #[error("class index {found} at voxel {voxel} out of range for {classes} classes")]
    ClassRange {
        found: u8,
        voxel: usize,
        classes: usize,
    },

    #[error("could not place {placed} of {wanted} ellipsoids after {attempts} attempts")]
    InfeasiblePlacement {
        placed: usize,
        wanted: usize,
        attempts: usize,
    },

    #[error("invalid generator input: {0}")]
    Config(String),

    #[error("need at least two cases to split, got {0}")]
    TooFewCases(usize),

    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
