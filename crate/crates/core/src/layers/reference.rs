//! Serial reference kernels on whole tensors. These are the oracles the
//! distributed layers are checked against: plain loops, bounds checks
//! instead of padding, no partitioning.

use super::kernels::dot;
use super::op::{ConvParams, PoolKind, POOL_WINDOW};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape5D, Tensor5};

fn check_conv<T>(x: Shape5D, w: &[T], p: &ConvParams, channels: usize) -> Result<()> {
    if x.c != channels {
        return Err(Error::ShapeMismatch(format!("input has {} channels, layer expects {channels}", x.c)));
    }
    if w.len() != p.weight_len() {
        return Err(Error::ShapeMismatch(format!(
            "weights have {} elements, layer expects {}",
            w.len(),
            p.weight_len()
        )));
    }
    Ok(())
}

/// Input coordinate read by output `o` through tap `k`, if inside `0..len`.
#[inline]
fn input_at(o: usize, k: usize, s: usize, r: usize, len: usize) -> Option<usize> {
    let i = (s * o + k) as isize - r as isize;
    (i >= 0 && (i as usize) < len).then_some(i as usize)
}

/// Output coordinate that reads input `i` through tap `k`, if any.
#[inline]
fn output_at(i: usize, k: usize, s: usize, r: usize, len: usize) -> Option<usize> {
    let t = (i + r) as isize - k as isize;
    if t < 0 || t % s as isize != 0 {
        return None;
    }
    let o = (t / s as isize) as usize;
    (o < len).then_some(o)
}

/// `y[n,co,o] = sum_{ci,k} w[co,ci,k] x[n,ci,s*o+k-r]` with zero padding.
pub fn conv3d_ref<T: Real>(x: &Tensor5<T>, w: &[T], p: &ConvParams) -> Result<Tensor5<T>> {
    check_conv::<T>(x.shape, w, p, p.in_channels)?;
    let out = x.shape.with_c(p.out_channels).with_spatial(p.conv_out(x.shape.spatial()));
    let (s, r, k) = (p.stride, p.pad(), p.kernel);
    let xs = x.shape;
    let mut y = Tensor5::zeros(out);
    for n in 0..out.n {
        for co in 0..out.c {
            for od in 0..out.d {
                for oh in 0..out.h {
                    for ow in 0..out.w {
                        let mut acc = T::zero();
                        for ci in 0..p.in_channels {
                            for a in 0..k[0] {
                                let Some(id) = input_at(od, a, s[0], r[0], xs.d) else { continue };
                                for b in 0..k[1] {
                                    let Some(ih) = input_at(oh, b, s[1], r[1], xs.h) else { continue };
                                    for c in 0..k[2] {
                                        let Some(iw) = input_at(ow, c, s[2], r[2], xs.w) else { continue };
                                        let wi = (((co * p.in_channels + ci) * k[0] + a) * k[1] + b) * k[2] + c;
                                        acc += w[wi] * x.at(n, ci, id, ih, iw);
                                    }
                                }
                            }
                        }
                        *y.at_mut(n, co, od, oh, ow) = acc;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`conv3d_ref`] with respect to its input, for an input of
/// spatial extents `input`.
pub fn conv3d_bwd_data_ref<T: Real>(dy: &Tensor5<T>, w: &[T], p: &ConvParams, input: [usize; 3]) -> Result<Tensor5<T>> {
    check_conv::<T>(dy.shape, w, p, p.out_channels)?;
    if p.conv_out(input) != dy.shape.spatial() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {} does not match input extents {input:?}",
            dy.shape
        )));
    }
    let xs = dy.shape.with_c(p.in_channels).with_spatial(input);
    let os = dy.shape;
    let (s, r, k) = (p.stride, p.pad(), p.kernel);
    let mut dx = Tensor5::zeros(xs);
    for n in 0..xs.n {
        for ci in 0..xs.c {
            for id in 0..xs.d {
                for ih in 0..xs.h {
                    for iw in 0..xs.w {
                        let mut acc = T::zero();
                        for co in 0..p.out_channels {
                            for a in 0..k[0] {
                                let Some(od) = output_at(id, a, s[0], r[0], os.d) else { continue };
                                for b in 0..k[1] {
                                    let Some(oh) = output_at(ih, b, s[1], r[1], os.h) else { continue };
                                    for c in 0..k[2] {
                                        let Some(ow) = output_at(iw, c, s[2], r[2], os.w) else { continue };
                                        let wi = (((co * p.in_channels + ci) * k[0] + a) * k[1] + b) * k[2] + c;
                                        acc += w[wi] * dy.at(n, co, od, oh, ow);
                                    }
                                }
                            }
                        }
                        *dx.at_mut(n, ci, id, ih, iw) = acc;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Gradient of [`conv3d_ref`] with respect to its weights. Each weight is one
/// [`dot`] product over every `(n, output voxel)` pair, out-of-range inputs
/// reading as zero.
pub fn conv3d_bwd_filter_ref<T: Real>(x: &Tensor5<T>, dy: &Tensor5<T>, p: &ConvParams) -> Result<Vec<T>> {
    if x.shape.c != p.in_channels
        || dy.shape.c != p.out_channels
        || dy.shape.n != x.shape.n
        || p.conv_out(x.shape.spatial()) != dy.shape.spatial()
    {
        return Err(Error::ShapeMismatch(format!("filter gradient of {} from {}", x.shape, dy.shape)));
    }
    let (s, r, k) = (p.stride, p.pad(), p.kernel);
    let (xs, os) = (x.shape, dy.shape);
    let mut dw = vec![T::zero(); p.weight_len()];
    let mut xs_flat = Vec::with_capacity(os.n * os.voxels());
    let mut ds_flat = Vec::with_capacity(os.n * os.voxels());
    for co in 0..p.out_channels {
        for ci in 0..p.in_channels {
            for a in 0..k[0] {
                for b in 0..k[1] {
                    for c in 0..k[2] {
                        xs_flat.clear();
                        ds_flat.clear();
                        for n in 0..xs.n {
                            for od in 0..os.d {
                                for oh in 0..os.h {
                                    for ow in 0..os.w {
                                        ds_flat.push(dy.at(n, co, od, oh, ow));
                                        let v = match (
                                            input_at(od, a, s[0], r[0], xs.d),
                                            input_at(oh, b, s[1], r[1], xs.h),
                                            input_at(ow, c, s[2], r[2], xs.w),
                                        ) {
                                            (Some(id), Some(ih), Some(iw)) => x.at(n, ci, id, ih, iw),
                                            _ => T::zero(),
                                        };
                                        xs_flat.push(v);
                                    }
                                }
                            }
                        }
                        dw[(((co * p.in_channels + ci) * k[0] + a) * k[1] + b) * k[2] + c] = dot(&ds_flat, &xs_flat);
                    }
                }
            }
        }
    }
    Ok(dw)
}

/// The convolution whose input-adjoint is the transposed convolution `p`.
pub fn deconv_as_conv(p: &ConvParams) -> ConvParams {
    ConvParams { in_channels: p.out_channels, out_channels: p.in_channels, kernel: p.kernel, stride: p.stride }
}

/// Transposed convolution: the input-adjoint of the convolution that maps
/// the deconvolution's output back to its input. Weights are laid out
/// `[in, out, kd, kh, kw]` from the deconvolution's point of view.
pub fn deconv3d_ref<T: Real>(x: &Tensor5<T>, w: &[T], p: &ConvParams) -> Result<Tensor5<T>> {
    let out = x.shape.spatial();
    conv3d_bwd_data_ref(x, w, &deconv_as_conv(p), [0, 1, 2].map(|k| out[k] * p.stride[k]))
}

/// Input gradient of [`deconv3d_ref`].
pub fn deconv3d_bwd_data_ref<T: Real>(dy: &Tensor5<T>, w: &[T], p: &ConvParams) -> Result<Tensor5<T>> {
    conv3d_ref(dy, w, &deconv_as_conv(p))
}

/// Weight gradient of [`deconv3d_ref`].
pub fn deconv3d_bwd_filter_ref<T: Real>(x: &Tensor5<T>, dy: &Tensor5<T>, p: &ConvParams) -> Result<Vec<T>> {
    conv3d_bwd_filter_ref(dy, x, &deconv_as_conv(p))
}

/// Output of pooling, with the argmax of each window for max-pooling
/// (linear offset within the 2^3 window).
pub fn pool3d_ref<T: Real>(x: &Tensor5<T>, kind: PoolKind) -> Result<(Tensor5<T>, Vec<u8>)> {
    let s = x.shape;
    if s.spatial().iter().any(|e| e % POOL_WINDOW != 0) {
        return Err(Error::ShapeMismatch(format!("pooling needs even extents, got {s}")));
    }
    let out = s.with_spatial(s.spatial().map(|e| e / POOL_WINDOW));
    let mut y = Tensor5::zeros(out);
    let mut arg = Vec::new();
    let eighth = T::from_f64c(1.0 / 8.0);
    for n in 0..out.n {
        for c in 0..out.c {
            for od in 0..out.d {
                for oh in 0..out.h {
                    for ow in 0..out.w {
                        let mut sum = T::zero();
                        let mut best = T::neg_infinity();
                        let mut best_at = 0u8;
                        for j in 0..8u8 {
                            let (a, b, e) = ((j >> 2) as usize, ((j >> 1) & 1) as usize, (j & 1) as usize);
                            let v = x.at(n, c, 2 * od + a, 2 * oh + b, 2 * ow + e);
                            sum += v;
                            if v > best {
                                best = v;
                                best_at = j;
                            }
                        }
                        *y.at_mut(n, c, od, oh, ow) = match kind {
                            PoolKind::Average => sum * eighth,
                            PoolKind::Max => {
                                arg.push(best_at);
                                best
                            }
                        };
                    }
                }
            }
        }
    }
    Ok((y, arg))
}

/// Backward pass of [`pool3d_ref`]; `argmax` is required for max-pooling.
pub fn pool3d_bwd_ref<T: Real>(dy: &Tensor5<T>, kind: PoolKind, argmax: &[u8]) -> Tensor5<T> {
    let os = dy.shape;
    let xs = os.with_spatial(os.spatial().map(|e| e * POOL_WINDOW));
    let mut dx = Tensor5::zeros(xs);
    let eighth = T::from_f64c(1.0 / 8.0);
    let mut i = 0;
    for n in 0..os.n {
        for c in 0..os.c {
            for od in 0..os.d {
                for oh in 0..os.h {
                    for ow in 0..os.w {
                        let g = dy.at(n, c, od, oh, ow);
                        for j in 0..8u8 {
                            let keep = match kind {
                                PoolKind::Average => true,
                                PoolKind::Max => argmax[i] == j,
                            };
                            if keep {
                                let (a, b, e) = ((j >> 2) as usize, ((j >> 1) & 1) as usize, (j & 1) as usize);
                                *dx.at_mut(n, c, 2 * od + a, 2 * oh + b, 2 * ow + e) = match kind {
                                    PoolKind::Average => g * eighth,
                                    PoolKind::Max => g,
                                };
                            }
                        }
                        i += 1;
                    }
                }
            }
        }
    }
    dx
}
