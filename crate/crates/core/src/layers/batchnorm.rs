//! Batch normalization with statistics over every rank holding the layer.
//!
//! Each rank reduces its block to per-channel `[sum x, sum x^2]` plus a voxel
//! count; one allreduce makes these global. The backward pass does the same
//! with `[sum dy, sum dy*xhat]`. The serial oracle runs the identical code
//! with a no-op reduction.

use crate::error::{Error, Result};
use crate::fabric::Comm;
use crate::real::Real;
use crate::tensor::DistTensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of one layer. The affine parameters `gamma` and `beta`
/// are trainable and live with the other parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState { running_mean: vec![T::zero(); channels], running_var: vec![T::one(); channels] }
    }
}

/// Saved forward quantities for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache<T> {
    pub mode: BnMode,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub count: T,
}

/// Forward pass over a local `(n, c, voxels)` buffer. `reduce` sums a vector
/// over every participating rank.
pub fn batchnorm_forward<T: Real>(
    x: &[T],
    n: usize,
    channels: usize,
    gamma: &[T],
    beta: &[T],
    state: &mut BnState<T>,
    mode: BnMode,
    reduce: &mut dyn FnMut(&mut [T]) -> Result<()>,
) -> Result<(Vec<T>, BnCache<T>)> {
    if gamma.len() != channels || beta.len() != channels || state.running_mean.len() != channels {
        return Err(Error::ShapeMismatch(format!("batch norm over {channels} channels")));
    }
    let vox = if n * channels == 0 { 0 } else { x.len() / (n * channels) };
    let eps = T::from_f64c(BN_EPS);
    let (mean, inv_std, count) = match mode {
        BnMode::Train => {
            // Local sums accumulate in f64 so that fp32 results depend on the
            // partition only through the final rounding of each partial.
            let mut acc = vec![0.0f64; 2 * channels];
            for s in 0..n {
                for c in 0..channels {
                    let v = &x[(s * channels + c) * vox..][..vox];
                    for &e in v {
                        let e = e.to_f64c();
                        acc[c] += e;
                        acc[channels + c] += e * e;
                    }
                }
            }
            let mut stats: Vec<T> = acc.into_iter().map(T::from_f64c).collect();
            stats.push(T::from_usize(n * vox).unwrap());
            reduce(&mut stats)?;
            let count = stats[2 * channels];
            let mut mean = vec![T::zero(); channels];
            let mut inv = vec![T::zero(); channels];
            let m = T::from_f64c(BN_MOMENTUM);
            for c in 0..channels {
                mean[c] = stats[c] / count;
                let var = (stats[channels + c] / count - mean[c] * mean[c]).max(T::zero());
                inv[c] = T::one() / (var + eps).sqrt();
                state.running_mean[c] = m * state.running_mean[c] + (T::one() - m) * mean[c];
                state.running_var[c] = m * state.running_var[c] + (T::one() - m) * var;
            }
            (mean, inv, count)
        }
        BnMode::Eval => {
            let inv = state.running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (state.running_mean.clone(), inv, T::one())
        }
    };
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for s in 0..n {
        for c in 0..channels {
            let off = (s * channels + c) * vox;
            for i in off..off + vox {
                xhat[i] = (x[i] - mean[c]) * inv_std[c];
                y[i] = gamma[c] * xhat[i] + beta[c];
            }
        }
    }
    Ok((y, BnCache { mode, xhat, inv_std, count }))
}

/// Backward pass. Returns the input gradient and this rank's partial
/// `(d gamma, d beta)`, which still need summing over ranks.
pub fn batchnorm_backward<T: Real>(
    dy: &[T],
    n: usize,
    channels: usize,
    gamma: &[T],
    cache: &BnCache<T>,
    reduce: &mut dyn FnMut(&mut [T]) -> Result<()>,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let vox = if n * channels == 0 { 0 } else { dy.len() / (n * channels) };
    let mut acc = vec![0.0f64; 2 * channels];
    for s in 0..n {
        for c in 0..channels {
            let off = (s * channels + c) * vox;
            for i in off..off + vox {
                let g = dy[i].to_f64c();
                acc[c] += g;
                acc[channels + c] += g * cache.xhat[i].to_f64c();
            }
        }
    }
    let mut sums: Vec<T> = acc.into_iter().map(T::from_f64c).collect();
    let dbeta = sums[..channels].to_vec();
    let dgamma = sums[channels..].to_vec();
    let mut dx = vec![T::zero(); dy.len()];
    match cache.mode {
        BnMode::Train => {
            reduce(&mut sums)?;
            let m = cache.count;
            for s in 0..n {
                for c in 0..channels {
                    let scale = gamma[c] * cache.inv_std[c] / m;
                    let off = (s * channels + c) * vox;
                    for i in off..off + vox {
                        dx[i] = scale * (m * dy[i] - sums[c] - cache.xhat[i] * sums[channels + c]);
                    }
                }
            }
        }
        BnMode::Eval => {
            for s in 0..n {
                for c in 0..channels {
                    let off = (s * channels + c) * vox;
                    for i in off..off + vox {
                        dx[i] = dy[i] * gamma[c] * cache.inv_std[c];
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Distributed forward pass; statistics are summed over every rank.
pub fn dist_batchnorm_forward<T: Real>(
    comm: &Comm,
    x: &DistTensor<T>,
    gamma: &[T],
    beta: &[T],
    state: &mut BnState<T>,
    mode: BnMode,
) -> Result<(DistTensor<T>, BnCache<T>)> {
    let local = x.local_shape();
    let world = comm.world();
    let (y, cache) = batchnorm_forward(&x.data, local.n, local.c, gamma, beta, state, mode, &mut |v| {
        Ok(comm.allreduce_sum(v, &world)?)
    })?;
    Ok((x.with_data(y), cache))
}

/// Distributed backward pass; returns the local `(d gamma, d beta)` partials.
pub fn dist_batchnorm_backward<T: Real>(
    comm: &Comm,
    dy: &DistTensor<T>,
    gamma: &[T],
    cache: &BnCache<T>,
) -> Result<(DistTensor<T>, Vec<T>, Vec<T>)> {
    let local = dy.local_shape();
    let world = comm.world();
    let (dx, dg, db) =
        batchnorm_backward(&dy.data, local.n, local.c, gamma, cache, &mut |v| Ok(comm.allreduce_sum(v, &world)?))?;
    Ok((dy.with_data(dx), dg, db))
}

/// No reduction: the serial oracle's view of the whole tensor.
pub fn serial_reduce<T>(_: &mut [T]) -> Result<()> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{ExecMode, Fabric};
    use crate::real::max_abs_diff;
    use crate::tensor::{make_partition, ProcessGrid, Shape5D, Tensor5};

    fn input(shape: Shape5D) -> Tensor5<f64> {
        Tensor5::from_fn(shape, |n, c, d, h, w| ((n * 31 + c * 17 + d * 7 + h * 3 + w) as f64 * 0.61).sin() + c as f64)
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = vec![3.0f64; 2 * 2 * 8];
        let mut st = BnState::new(2);
        let (y, _) =
            batchnorm_forward(&x, 2, 2, &[1.0, 1.0], &[0.0, 0.0], &mut st, BnMode::Train, &mut serial_reduce).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_two_pass_textbook() {
        let shape = Shape5D::new(3, 2, 2, 2, 2).unwrap();
        let x = input(shape);
        let (g, b) = ([1.5, 0.5], [0.1, -0.2]);
        let mut st = BnState::new(2);
        let (y, _) = batchnorm_forward(&x.data, 3, 2, &g, &b, &mut st, BnMode::Train, &mut serial_reduce).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> =
                (0..3).flat_map(|n| (0..8).map(move |i| (n, i))).map(|(n, i)| x.data[(n * 2 + c) * 8 + i]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for n in 0..3 {
                for i in 0..8 {
                    let k = (n * 2 + c) * 8 + i;
                    let want = g[c] * (x.data[k] - mean) / (var + BN_EPS).sqrt() + b[c];
                    assert!((y[k] - want).abs() < 1e-12);
                }
            }
            assert!((st.running_mean[c] - 0.1 * mean).abs() < 1e-12);
        }
    }

    #[test]
    fn distributed_statistics_match_serial() {
        let shape = Shape5D::new(4, 3, 4, 4, 4).unwrap();
        let x = input(shape);
        let dy = Tensor5::from_fn(shape, |n, c, d, h, w| ((n + 2 * c + 3 * d + 5 * h + 7 * w) as f64 * 0.3).cos());
        let (g, b) = (vec![1.2, 0.7, -0.4], vec![0.0, 0.3, 0.1]);
        let mut st_ref = BnState::new(3);
        let (y_ref, cache) =
            batchnorm_forward(&x.data, 4, 3, &g, &b, &mut st_ref, BnMode::Train, &mut serial_reduce).unwrap();
        let (dx_ref, dg_ref, db_ref) = batchnorm_backward(&dy.data, 4, 3, &g, &cache, &mut serial_reduce).unwrap();
        let grid = ProcessGrid::new(2, 2, 1, 1).unwrap();
        let meta = make_partition(shape, grid, [0; 3]).unwrap();
        let fabric = Fabric::new(4, ExecMode::Sequential);
        let out = fabric
            .run_all(|comm| {
                let xr = DistTensor::scatter(&x, &meta, comm.rank())?;
                let dyr = DistTensor::scatter(&dy, &meta, comm.rank())?;
                let mut st = BnState::new(3);
                let (y, cache) = dist_batchnorm_forward(comm, &xr, &g, &b, &mut st, BnMode::Train)?;
                let (dx, mut dg, mut db) = dist_batchnorm_backward(comm, &dyr, &g, &cache)?;
                comm.allreduce_sum(&mut dg, &comm.world())?;
                comm.allreduce_sum(&mut db, &comm.world())?;
                Ok((y, dx, dg, db, st))
            })
            .unwrap();
        let y = DistTensor::gather(&out.iter().map(|o| o.0.clone()).collect::<Vec<_>>()).unwrap();
        let dx = DistTensor::gather(&out.iter().map(|o| o.1.clone()).collect::<Vec<_>>()).unwrap();
        assert!(max_abs_diff(&y.data, &y_ref) < 1e-12);
        assert!(max_abs_diff(&dx.data, &dx_ref) < 1e-12);
        assert!(max_abs_diff(&out[0].2, &dg_ref) < 1e-12);
        assert!(max_abs_diff(&out[0].3, &db_ref) < 1e-12);
        assert!(max_abs_diff(&out[3].4.running_var, &st_ref.running_var) < 1e-12);
    }
}
