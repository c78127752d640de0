//! Sample files, hyperslab reads and the in-memory distributed sample cache.
//!
//! Epoch 0 reads every sample once from disk, each rank fetching only the
//! hyperslab of its spatial region. The group that read a sample owns it;
//! later epochs move hyperslabs between groups over the fabric and never
//! touch the files again.

mod counters;
mod format;
mod manifest;
mod schedule;
mod store;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use counters::{EpochIo, IoCounters};
pub use format::{
    decode_voxels, read_header, read_hyperslab, read_sample, write_sample, Dtype, SampleHeader, DIMS_BYTES,
    HEADER_BYTES, MAGIC, PAYLOAD_OFFSET, VERSION,
};
pub use manifest::{Manifest, SampleEntry};
pub use schedule::{build_owner_map, epoch_schedule, EpochSchedule, OwnerMap};
pub use store::{DataStore, Delivered, MiniBatch};
pub use synthetic::{generate_dataset, synthetic_voxels, SyntheticSpec, SyntheticTask};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported version {found}")]
    BadVersion { path: PathBuf, found: u8 },
    #[error("{path}: unknown dtype code {found}")]
    BadDtype { path: PathBuf, found: u8 },
    #[error("{0}")]
    OutOfBounds(String),
    #[error("batch of {n} over {groups} groups: {reason}")]
    BadBatch { n: usize, groups: usize, reason: String },
    #[error("the sample cache is already populated")]
    CacheNotEmpty,
    #[error("sample {0} is not in the owner's cache")]
    MissingSample(usize),
    #[error("cache was ingested on {cached} groups, schedule has {requested}; re-shard first")]
    GridChanged { cached: usize, requested: usize },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        DataError::Io { path: path.into(), reason: e.to_string() }
    }
}
