use crate::error::{Error, Result};
use crate::fabric::Comm;
use crate::real::Real;
use crate::tensor::DistTensor;

/// Mean squared error over all `N*K` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mse<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

/// Mean per-voxel cross-entropy of softmax logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

/// Sum of squared errors of this rank's rows and the gradient for a global
/// normalizer of `total` elements.
fn mse_partial<T: Real>(pred: &[T], target: &[T], total: usize) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let scale = T::from_f64c(2.0) / T::from_usize(total).unwrap();
    let mut sum = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let e = p - t;
        sum += e * e;
        grad.push(scale * e);
    }
    Ok((sum, grad))
}

/// Serial mean squared error.
pub fn mse<T: Real>(pred: &[T], target: &[T]) -> Result<Mse<T>> {
    let (sum, grad) = mse_partial(pred, target, pred.len().max(1))?;
    Ok(Mse { loss: sum / T::from_usize(pred.len().max(1)).unwrap(), grad })
}

/// Mean squared error of a sample-parallel prediction; `target` holds this
/// rank's rows. The loss is identical on every rank.
pub fn dist_mse<T: Real>(comm: &Comm, pred: &DistTensor<T>, target: &[T]) -> Result<Mse<T>> {
    let total = pred.meta().global().len();
    let (sum, grad) = mse_partial(&pred.data, target, total)?;
    let sum = comm.allreduce_scalar(sum, &comm.world())?;
    Ok(Mse { loss: sum / T::from_usize(total).unwrap(), grad })
}

/// Sum of `-log softmax(z)[label]` over this block's voxels, and the
/// gradient `(softmax - onehot) / total`. `labels` holds class ids.
fn ce_partial<T: Real>(logits: &[T], labels: &[T], n: usize, classes: usize, total: usize) -> Result<(T, Vec<T>)> {
    if n * classes == 0 {
        return Ok((T::zero(), Vec::new()));
    }
    let vox = logits.len() / (n * classes);
    if labels.len() != n * vox {
        return Err(Error::ShapeMismatch(format!("{} labels for {} voxels", labels.len(), n * vox)));
    }
    let inv_total = T::one() / T::from_usize(total).unwrap();
    let mut sum = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    let mut prob = vec![T::zero(); classes];
    for s in 0..n {
        let z = &logits[s * classes * vox..(s + 1) * classes * vox];
        let g = &mut grad[s * classes * vox..(s + 1) * classes * vox];
        for v in 0..vox {
            let label = labels[s * vox + v]
                .to_usize()
                .filter(|&l| l < classes)
                .ok_or_else(|| Error::ShapeMismatch(format!("label {} outside 0..{classes}", labels[s * vox + v])))?;
            let mut max = T::neg_infinity();
            for c in 0..classes {
                max = max.max(z[c * vox + v]);
            }
            let mut denom = T::zero();
            for c in 0..classes {
                prob[c] = (z[c * vox + v] - max).exp();
                denom += prob[c];
            }
            sum += denom.ln() + max - z[label * vox + v];
            for c in 0..classes {
                let onehot = if c == label { T::one() } else { T::zero() };
                g[c * vox + v] = (prob[c] / denom - onehot) * inv_total;
            }
        }
    }
    Ok((sum, grad))
}

/// Serial cross-entropy over `(n, classes, voxels)` logits.
pub fn cross_entropy<T: Real>(logits: &[T], labels: &[T], n: usize, classes: usize) -> Result<CrossEntropy<T>> {
    let total = labels.len().max(1);
    let (sum, grad) = ce_partial(logits, labels, n, classes, total)?;
    Ok(CrossEntropy { loss: sum / T::from_usize(total).unwrap(), grad })
}

/// Cross-entropy of spatially partitioned logits; `labels` is laid out like
/// `logits` with one channel. The loss is identical on every rank.
pub fn dist_cross_entropy<T: Real>(
    comm: &Comm,
    logits: &DistTensor<T>,
    labels: &DistTensor<T>,
) -> Result<CrossEntropy<T>> {
    if labels.meta() != &logits.meta().with_channels(1) {
        return Err(Error::ShapeMismatch("labels are not laid out like the logits".into()));
    }
    let g = logits.meta().global();
    let total = g.n * g.voxels();
    let local = logits.local_shape();
    let (sum, grad) = ce_partial(&logits.data, &labels.data, local.n, local.c, total)?;
    let sum = comm.allreduce_scalar(sum, &comm.world())?;
    Ok(CrossEntropy { loss: sum / T::from_usize(total).unwrap(), grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{ExecMode, Fabric};
    use crate::tensor::{make_partition, ProcessGrid, Shape5D, Tensor5};

    #[test]
    fn mse_zero_and_value() {
        assert_eq!(mse(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap().loss, 0.0);
        let m = mse(&[1.0f64, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(m.loss, 0.5);
        assert_eq!(m.grad, vec![1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_two_voxels_by_hand() {
        // One sample, two classes, two voxels; logits laid out [class][voxel].
        let logits = [0.0f64, 1.0, 2.0, -1.0];
        let labels = [1.0, 0.0];
        let ce = cross_entropy(&logits, &labels, 1, 2).unwrap();
        let v0 = (1.0 + 2f64.exp()).ln() - 2.0;
        let v1 = ((1f64).exp() + (-1f64).exp()).ln() - 1.0;
        assert!((ce.loss - (v0 + v1) / 2.0).abs() < 1e-15);
        let p0 = 2f64.exp() / (1.0 + 2f64.exp());
        assert!((ce.grad[2] - (p0 - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn distributed_cross_entropy_matches_serial() {
        let shape = Shape5D::new(2, 3, 4, 4, 4).unwrap();
        let z = Tensor5::from_fn(shape, |n, c, d, h, w| ((n + 3 * c + 5 * d + 7 * h + 11 * w) as f64 * 0.37).sin());
        let lab = Tensor5::from_fn(shape.with_c(1), |n, _, d, h, w| ((n + d + h * w) % 3) as f64);
        let serial = cross_entropy(&z.data, &lab.data, 2, 3).unwrap();
        let meta = make_partition(shape, ProcessGrid::new(1, 2, 1, 1).unwrap(), [0; 3]).unwrap();
        let out = Fabric::new(2, ExecMode::Sequential)
            .run_all(|comm| {
                let zr = DistTensor::scatter(&z, &meta, comm.rank())?;
                let lr = DistTensor::scatter(&lab, &meta.with_channels(1), comm.rank())?;
                let ce = dist_cross_entropy(comm, &zr, &lr)?;
                Ok((ce.loss, zr.with_data(ce.grad)))
            })
            .unwrap();
        assert_eq!(out[0].0, out[1].0);
        assert!((out[0].0 - serial.loss).abs() < 1e-12);
        let grad = DistTensor::gather(&[out[0].1.clone(), out[1].1.clone()]).unwrap();
        assert_eq!(grad.data, serial.grad);
    }
}
