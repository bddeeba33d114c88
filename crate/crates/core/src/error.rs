use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("odd dimension {rows}x{cols}; both sides must be even")]
    OddDimension { rows: usize, cols: usize },
    #[error("dimensions {rows}x{cols} are not divisible by 2^{levels}")]
    NotDivisible { rows: usize, cols: usize, levels: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("intensity {value} outside the {manufacturer} range [{lo}, {hi}]")]
    IntensityRange { value: i32, manufacturer: &'static str, lo: i32, hi: i32 },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("every training mask is empty; cannot derive a crop window")]
    EmptyMasks,
    #[error("invalid crop window: {0}")]
    InvalidWindow(String),
    #[error("cannot split {patients} patients into {folds} folds")]
    TooManyFolds { folds: usize, patients: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} supervision levels, got {got}")]
    LevelCount { expected: usize, got: usize },
    #[error("graph already carries deep supervision heads")]
    AlreadySupervised,
    #[error("parameter inventory mismatch: {0}")]
    InventoryMismatch(String),
}
