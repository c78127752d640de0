//! Distributed convolution and transposed convolution.
//!
//! Weights are replicated on every rank. Inputs arrive in a spatial (or
//! sample-parallel) layout; halos are exchanged with the radius each pass
//! needs, then the local kernels run on the padded block.

use super::kernels::{conv_backward_data, conv_backward_filter, conv_forward};
use super::op::ConvParams;
use super::reference::deconv_as_conv;
use crate::error::{Error, Result};
use crate::fabric::Comm;
use crate::real::Real;
use crate::tensor::{Block, DistTensor, DistTensorMeta, TensorError};

/// Exchange halos of width `radii` and return the zero-padded local block.
///
/// Dimensions that are not partitioned are padded with zeros only.
pub fn halo_block<T: Real>(comm: &Comm, x: &DistTensor<T>, radii: [usize; 3]) -> Result<Block<T>> {
    if radii == [0; 3] {
        return Ok(x.padded_by(radii));
    }
    let parts = x.meta().grid().parts();
    let exchanged = [0, 1, 2].map(|k| if parts[k] > 1 { radii[k] } else { 0 });
    let mut y = x.with_data(x.data.clone());
    y.set_radii(exchanged)?;
    comm.halo_exchange(&mut y)?;
    Ok(y.padded_by(radii))
}

/// Layout of a strided convolution's output; every partitioned local extent
/// must be a multiple of the stride so that output blocks line up.
pub fn conv_output_meta(meta: &DistTensorMeta, p: &ConvParams) -> Result<DistTensorMeta> {
    let global = meta.global();
    if global.c != p.in_channels {
        return Err(Error::ShapeMismatch(format!("input has {} channels, layer expects {}", global.c, p.in_channels)));
    }
    let parts = meta.grid().parts();
    let spatial = global.spatial();
    for k in 0..3 {
        let local = spatial[k] / parts[k];
        if parts[k] > 1 && !local.is_multiple_of(p.stride[k]) {
            return Err(TensorError::NonDivisible { extent: local, parts: p.stride[k] }.into());
        }
    }
    Ok(meta.reshaped(p.out_channels, p.conv_out(spatial))?)
}

/// Layout of a transposed convolution's output.
pub fn deconv_output_meta(meta: &DistTensorMeta, p: &ConvParams) -> Result<DistTensorMeta> {
    let global = meta.global();
    if global.c != p.in_channels {
        return Err(Error::ShapeMismatch(format!("input has {} channels, layer expects {}", global.c, p.in_channels)));
    }
    let s = global.spatial();
    Ok(meta.reshaped(p.out_channels, [0, 1, 2].map(|k| s[k] * p.stride[k]))?)
}

fn check_weights<T>(w: &[T], p: &ConvParams) -> Result<()> {
    if w.len() != p.weight_len() {
        return Err(Error::ShapeMismatch(format!(
            "weights have {} elements, layer expects {}",
            w.len(),
            p.weight_len()
        )));
    }
    Ok(())
}

/// Forward convolution from an already padded input block.
pub fn conv3d_from_block<T: Real>(
    xb: &Block<T>,
    out_meta: &DistTensorMeta,
    rank: usize,
    w: &[T],
    p: &ConvParams,
) -> Result<DistTensor<T>> {
    check_weights(w, p)?;
    let y = conv_forward(xb, w, p, out_meta.region(rank));
    Ok(DistTensor::new(out_meta.clone(), rank, y)?)
}

/// Distributed forward convolution.
pub fn dist_conv3d<T: Real>(comm: &Comm, x: &DistTensor<T>, w: &[T], p: &ConvParams) -> Result<DistTensor<T>> {
    let out = conv_output_meta(x.meta(), p)?;
    let xb = halo_block(comm, x, p.forward_halo())?;
    conv3d_from_block(&xb, &out, x.rank(), w, p)
}

/// Distributed input gradient of a convolution whose input had layout `x_meta`.
pub fn dist_conv3d_bwd_data<T: Real>(
    comm: &Comm,
    dy: &DistTensor<T>,
    w: &[T],
    p: &ConvParams,
    x_meta: &DistTensorMeta,
) -> Result<DistTensor<T>> {
    check_weights(w, p)?;
    let dyb = halo_block(comm, dy, p.backward_halo())?;
    let dx = conv_backward_data(&dyb, w, p, x_meta.region(dy.rank()));
    Ok(DistTensor::new(x_meta.clone(), dy.rank(), dx)?)
}

/// This rank's partial weight gradient from the padded input block.
pub fn conv3d_bwd_filter_local<T: Real>(xb: &Block<T>, dy: &DistTensor<T>, p: &ConvParams) -> Vec<T> {
    conv_backward_filter(xb, &dy.data, p, dy.region())
}

/// Distributed weight gradient, summed over every rank.
pub fn dist_conv3d_bwd_filter<T: Real>(
    comm: &Comm,
    x: &DistTensor<T>,
    dy: &DistTensor<T>,
    p: &ConvParams,
) -> Result<Vec<T>> {
    let xb = halo_block(comm, x, p.forward_halo())?;
    let mut dw = conv3d_bwd_filter_local(&xb, dy, p);
    comm.allreduce_sum(&mut dw, &comm.world())?;
    Ok(dw)
}

/// Transposed convolution from an input block padded by the equivalent
/// convolution's backward radius.
pub fn deconv3d_from_block<T: Real>(
    xb: &Block<T>,
    out_meta: &DistTensorMeta,
    rank: usize,
    w: &[T],
    p: &ConvParams,
) -> Result<DistTensor<T>> {
    check_weights(w, p)?;
    let y = conv_backward_data(xb, w, &deconv_as_conv(p), out_meta.region(rank));
    Ok(DistTensor::new(out_meta.clone(), rank, y)?)
}

/// Distributed transposed convolution.
pub fn dist_deconv3d<T: Real>(comm: &Comm, x: &DistTensor<T>, w: &[T], p: &ConvParams) -> Result<DistTensor<T>> {
    let out = deconv_output_meta(x.meta(), p)?;
    let xb = halo_block(comm, x, deconv_as_conv(p).backward_halo())?;
    deconv3d_from_block(&xb, &out, x.rank(), w, p)
}

/// Input gradient of a transposed convolution from the padded output-gradient
/// block (radius: the equivalent convolution's forward halo).
pub fn deconv3d_bwd_data_from_block<T: Real>(
    dyb: &Block<T>,
    x_meta: &DistTensorMeta,
    rank: usize,
    w: &[T],
    p: &ConvParams,
) -> Result<DistTensor<T>> {
    check_weights(w, p)?;
    let dx = conv_forward(dyb, w, &deconv_as_conv(p), x_meta.region(rank));
    Ok(DistTensor::new(x_meta.clone(), rank, dx)?)
}

pub fn dist_deconv3d_bwd_data<T: Real>(
    comm: &Comm,
    dy: &DistTensor<T>,
    w: &[T],
    p: &ConvParams,
    x_meta: &DistTensorMeta,
) -> Result<DistTensor<T>> {
    let dyb = halo_block(comm, dy, deconv_as_conv(p).forward_halo())?;
    deconv3d_bwd_data_from_block(&dyb, x_meta, dy.rank(), w, p)
}

/// This rank's partial weight gradient of a transposed convolution.
pub fn deconv3d_bwd_filter_local<T: Real>(dyb: &Block<T>, x: &DistTensor<T>, p: &ConvParams) -> Vec<T> {
    conv_backward_filter(dyb, &x.data, &deconv_as_conv(p), x.region())
}
