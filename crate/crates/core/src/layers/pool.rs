use super::op::{PoolKind, POOL_WINDOW};
use super::reference::{pool3d_bwd_ref, pool3d_ref};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::{DistTensor, DistTensorMeta, Tensor5, TensorError};

/// What the backward pass of a pooling layer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    pub kind: PoolKind,
    pub input_meta: DistTensorMeta,
    pub argmax: Vec<u8>,
}

/// Layout of a pooling layer's output. Windows never straddle ranks, so
/// every partitioned local extent must be even.
pub fn pool_output_meta(meta: &DistTensorMeta) -> Result<DistTensorMeta> {
    let global = meta.global();
    let parts = meta.grid().parts();
    let spatial = global.spatial();
    for k in 0..3 {
        let local = spatial[k] / parts[k];
        if !local.is_multiple_of(POOL_WINDOW) {
            return Err(TensorError::NonDivisible { extent: local, parts: POOL_WINDOW }.into());
        }
    }
    Ok(meta.reshaped(global.c, spatial.map(|e| e / POOL_WINDOW))?)
}

/// Pooling is purely local: with aligned windows the local block pools
/// exactly as the serial tensor does.
pub fn dist_pool3d<T: Real>(x: &DistTensor<T>, kind: PoolKind) -> Result<(DistTensor<T>, PoolCache)> {
    let out = pool_output_meta(x.meta())?;
    let local = Tensor5::from_vec(x.local_shape(), x.data.clone())?;
    let (y, argmax) = pool3d_ref(&local, kind)?;
    let cache = PoolCache { kind, input_meta: x.meta().clone(), argmax };
    Ok((DistTensor::new(out, x.rank(), y.data)?, cache))
}

pub fn dist_pool3d_backward<T: Real>(dy: &DistTensor<T>, cache: &PoolCache) -> Result<DistTensor<T>> {
    let local = Tensor5::from_vec(dy.local_shape(), dy.data.clone())?;
    let dx = pool3d_bwd_ref(&local, cache.kind, &cache.argmax);
    Ok(DistTensor::new(cache.input_meta.clone(), dy.rank(), dx.data)?)
}
