//! Rank-simulated hybrid-parallel (data x spatial) training of 3D CNNs.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] holds the index arithmetic: 5D shapes, process grids, block
//!   partitions, halo geometry and hyperslab byte ranges.
//! * [`fabric`] is a deterministic in-process message-passing runtime with
//!   point-to-point messages, tree allreduce and halo exchange.
//! * [`layers`] contains serial reference kernels and their distributed
//!   counterparts, together with flop and memory accounting.
//! * [`model`] builds networks (CosmoFlow, a small 3D U-Net), runs them
//!   serially or distributed, and trains them with SGD or Adam.
//! * [`datastore`] implements the sample file format, hyperslab reads and the
//!   in-memory distributed sample cache.
//! * [`perfmodel`] is the analytic iteration-time model.
//! * [`training`] runs epochs over the sample cache.

pub mod datastore;
pub mod error;
pub mod fabric;
pub mod layers;
pub mod model;
pub mod perfmodel;
pub mod real;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use fabric::{Comm, ExecMode, Fabric, TrafficClass, TrafficCounters};
pub use real::Real;
pub use tensor::{DistTensor, DistTensorMeta, ProcessGrid, Region, Shape5D, Tensor5};
