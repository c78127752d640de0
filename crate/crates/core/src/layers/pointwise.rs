use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::DistTensor;

pub fn leaky_relu<T: Real>(x: &[T], slope: T) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { slope * v }).collect()
}

/// Gradient of [`leaky_relu`] given the layer input `x`.
pub fn leaky_relu_backward<T: Real>(x: &[T], dy: &[T], slope: T) -> Vec<T> {
    x.iter().zip(dy).map(|(&v, &g)| if v > T::zero() { g } else { slope * g }).collect()
}

/// Identifies one training iteration for dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DropoutKey {
    pub seed: u64,
    pub epoch: u64,
    pub iteration: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` for one voxel, a pure function of the key and
/// the voxel's global coordinates.
fn voxel_uniform(key: DropoutKey, coords: [usize; 5]) -> f64 {
    let mut h = splitmix(key.seed);
    for v in [key.epoch, key.iteration].into_iter().chain(coords.map(|c| c as u64)) {
        h = splitmix(h ^ v);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Per-element dropout multipliers (`0` or `1/keep`) for this rank's block.
/// Keyed by global coordinates, so any partition of the same tensor draws
/// the same mask.
pub fn dropout_mask<T: Real>(x: &DistTensor<T>, keep: f64, key: DropoutKey) -> Vec<T> {
    let local = x.local_shape();
    let region = x.region();
    let samples = x.meta().samples(x.rank());
    let scale = T::from_f64c(1.0 / keep);
    let mut mask = Vec::with_capacity(local.len());
    for n in 0..local.n {
        for c in 0..local.c {
            for d in 0..local.d {
                for h in 0..local.h {
                    for w in 0..local.w {
                        let g =
                            [samples.start + n, c, region.offset[0] + d, region.offset[1] + h, region.offset[2] + w];
                        mask.push(if voxel_uniform(key, g) < keep { scale } else { T::zero() });
                    }
                }
            }
        }
    }
    mask
}

/// Inverted dropout. Returns the output and the mask (empty in eval mode).
pub fn dropout<T: Real>(x: &DistTensor<T>, keep: f64, key: DropoutKey, train: bool) -> (DistTensor<T>, Vec<T>) {
    if !train || keep >= 1.0 {
        return (x.with_data(x.data.clone()), Vec::new());
    }
    let mask = dropout_mask(x, keep, key);
    let y = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    (x.with_data(y), mask)
}

/// Channel concatenation of two tensors with identical sample and spatial
/// placement.
pub fn concat_channels<T: Real>(a: &DistTensor<T>, b: &DistTensor<T>) -> Result<DistTensor<T>> {
    let (sa, sb) = (a.local_shape(), b.local_shape());
    if a.meta().with_channels(0) != b.meta().with_channels(0) || a.rank() != b.rank() {
        return Err(Error::ShapeMismatch(format!(
            "concat of {} and {} with different layouts",
            a.meta().global(),
            b.meta().global()
        )));
    }
    let (pa, pb) = (sa.c * sa.voxels(), sb.c * sb.voxels());
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data[n * pa..(n + 1) * pa]);
        data.extend_from_slice(&b.data[n * pb..(n + 1) * pb]);
    }
    Ok(a.relabel_channels(sa.c + sb.c, data))
}

/// Inverse of [`concat_channels`]: split off the first `c_a` channels.
pub fn split_channels<T: Real>(x: &DistTensor<T>, c_a: usize) -> Result<(DistTensor<T>, DistTensor<T>)> {
    let s = x.local_shape();
    if c_a > s.c {
        return Err(Error::ShapeMismatch(format!("cannot split {c_a} of {} channels", s.c)));
    }
    let v = s.voxels();
    let (pa, pb) = (c_a * v, (s.c - c_a) * v);
    let mut a = Vec::with_capacity(s.n * pa);
    let mut b = Vec::with_capacity(s.n * pb);
    for chunk in x.data.chunks_exact((pa + pb).max(1)).take(s.n) {
        a.extend_from_slice(&chunk[..pa]);
        b.extend_from_slice(&chunk[pa..]);
    }
    Ok((x.relabel_channels(c_a, a), x.relabel_channels(s.c - c_a, b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{make_partition, ProcessGrid, Shape5D, Tensor5};

    #[test]
    fn leaky_values() {
        assert_eq!(leaky_relu(&[-1.0f64, 2.0], 0.01), vec![-0.01, 2.0]);
        assert_eq!(leaky_relu_backward(&[-1.0f64, 2.0], &[1.0, 1.0], 0.3), vec![0.3, 1.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let shape = Shape5D::cube(1, 2, 2);
        let meta = make_partition(shape, ProcessGrid::single(), [0; 3]).unwrap();
        let x = DistTensor::new(meta, 0, (0..16).map(|v| v as f64).collect()).unwrap();
        assert_eq!(dropout(&x, 0.8, DropoutKey::default(), false).0, x);
    }

    #[test]
    fn dropout_is_partition_invariant() {
        let shape = Shape5D::new(2, 3, 4, 4, 4).unwrap();
        let t = Tensor5::from_fn(shape, |n, c, d, h, w| (n + c + d + h + w) as f64 + 1.0);
        let key = DropoutKey { seed: 7, epoch: 1, iteration: 2 };
        let gathered = |grid: ProcessGrid| {
            let meta = make_partition(shape, grid, [0; 3]).unwrap();
            let parts: Vec<_> = (0..grid.ranks())
                .map(|r| dropout(&DistTensor::scatter(&t, &meta, r).unwrap(), 0.8, key, true).0)
                .collect();
            DistTensor::gather(&parts).unwrap()
        };
        let serial = gathered(ProcessGrid::single());
        assert_eq!(gathered(ProcessGrid::new(1, 2, 1, 1).unwrap()), serial);
        assert_eq!(gathered(ProcessGrid::new(2, 1, 2, 2).unwrap()), serial);
        let zeros = serial.data.iter().filter(|&&v| v == 0.0).count() as f64 / serial.data.len() as f64;
        assert!((zeros - 0.2).abs() < 0.06, "{zeros}");
    }

    #[test]
    fn concat_split_roundtrip() {
        let meta = make_partition(Shape5D::new(2, 1, 2, 2, 2).unwrap(), ProcessGrid::single(), [0; 3]).unwrap();
        let a = DistTensor::new(meta.clone(), 0, (0..16).map(|v| v as f64).collect()).unwrap();
        let b = DistTensor::new(meta.with_channels(2), 0, (100..132).map(|v| v as f64).collect()).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.local_shape().c, 3);
        assert_eq!(&c.data[8..16], &b.data[..8]);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!((a2, b2), (a, b));
    }
}
