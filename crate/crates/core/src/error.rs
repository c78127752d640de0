use thiserror::Error;

use crate::datastore::DataError;
use crate::fabric::FabricError;
use crate::perfmodel::PerfError;
use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported width {width}: {reason}")]
    UnsupportedWidth { width: usize, reason: String },
    #[error("layer `{layer}`: {error}")]
    Layer { layer: String, error: Box<Error> },
    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    /// Attach the name of the layer that produced this error.
    pub fn in_layer(self, layer: &str) -> Self {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer { layer: layer.to_string(), error: Box::new(e) },
        }
    }

    /// True when the error is a secondary deadlock report caused by another
    /// rank failing first.
    pub fn is_deadlock(&self) -> bool {
        matches!(self, Error::Fabric(FabricError::Deadlock { .. }))
    }
}
