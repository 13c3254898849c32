//! Synthetic multi-view data, the dataset container file, augmentations and
//! the paired-view batch sampler.

mod augment;
mod batch;
mod container;
mod synthetic;

pub use augment::{augment, AugmentationConfig};
pub use batch::{epoch_batches, BatchIter, ViewBatch, ViewSource};
pub use container::{
    load_container, read_container, save_container, write_container, DatasetContainer,
    SampleShape, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use synthetic::{generate_synthetic, latent_joint, PairedDataset, SyntheticSpec};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    MagicMismatch { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated while reading {what}")]
    TruncatedPayload { what: &'static str },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("unknown shape kind {0}")]
    UnknownShapeKind(u8),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid augmentation config: {0}")]
    InvalidAugmentation(String),
    #[error("label {label} at row {row} is out of range for {n_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: u32,
        n_classes: usize,
    },
    #[error("dataset has {n} samples, fewer than the batch size {batch_size}")]
    DatasetTooSmall { n: usize, batch_size: usize },
    #[error("views disagree: {0}")]
    ViewMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
