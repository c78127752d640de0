//! Index arithmetic for 5D `(N, C, D, H, W)` tensors: block partitions over a
//! process grid, halo geometry and hyperslab byte ranges.

mod dense;
mod dist;
mod hyperslab;
mod partition;
mod shape;

use thiserror::Error;

pub use dense::Tensor5;
pub(crate) use dense::{pack_box, unpack_box};
pub(crate) use dist::signed;
pub use dist::{Block, DistTensor, HaloSlab};
pub use hyperslab::{hyperslab_byte_ranges, ByteRange};
pub use partition::{direction_index, make_partition, sample_parallel, DistTensorMeta, HaloFace, MAX_HALO};
pub use shape::{split_extent, GridCoord, ProcessGrid, Region, Shape5D};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("extent {extent} is not divisible into {parts} parts")]
    NonDivisible { extent: usize, parts: usize },
    #[error("mini-batch of {n} samples is not divisible over {groups} groups")]
    BatchIndivisible { n: usize, groups: usize },
    #[error("halo radius {radius} in dim {dim} exceeds local extent {local} or the supported maximum")]
    HaloTooWide { dim: usize, radius: usize, local: usize },
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("shape {0} has a zero extent")]
    ZeroExtent(Shape5D),
    #[error("process grid {0} has a zero dimension")]
    EmptyGrid(ProcessGrid),
    #[error("bad grid `{0}`, expected GxPDxPHxPW")]
    BadGridSyntax(String),
}
