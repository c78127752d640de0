use super::shape::Shape5D;
use super::TensorError;

/// Dense C-order `(N, C, D, H, W)` tensor held by a single process.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T> {
    pub shape: Shape5D,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Tensor5<T> {
    pub fn zeros(shape: Shape5D) -> Self {
        Tensor5 { shape, data: vec![T::default(); shape.len()] }
    }

    pub fn from_vec(shape: Shape5D, data: Vec<T>) -> Result<Self, TensorError> {
        if data.len() != shape.len() {
            return Err(TensorError::ShapeMismatch(format!("buffer of {} elements for shape {shape}", data.len())));
        }
        Ok(Tensor5 { shape, data })
    }

    pub fn from_fn(shape: Shape5D, mut f: impl FnMut(usize, usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for d in 0..shape.d {
                    for h in 0..shape.h {
                        for w in 0..shape.w {
                            data.push(f(n, c, d, h, w));
                        }
                    }
                }
            }
        }
        Tensor5 { shape, data }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, d, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, d: usize, h: usize, w: usize) -> &mut T {
        let i = self.shape.index(n, c, d, h, w);
        &mut self.data[i]
    }

    /// Samples `[start, end)` as a new tensor.
    pub fn samples(&self, start: usize, end: usize) -> Self {
        let per = self.shape.sample_len();
        Tensor5 { shape: self.shape.with_n(end - start), data: self.data[start * per..end * per].to_vec() }
    }
}

/// Copy the sub-box `sub` (global coordinates) out of an array whose spatial
/// box starts at `origin` with extents `ext`, appending in C-order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pack_box<T: Copy>(
    src: &[T],
    n: usize,
    c: usize,
    origin: [isize; 3],
    ext: [usize; 3],
    sub_origin: [isize; 3],
    sub_ext: [usize; 3],
    out: &mut Vec<T>,
) {
    if sub_ext.contains(&0) {
        return;
    }
    let rel: Vec<usize> = (0..3).map(|k| (sub_origin[k] - origin[k]) as usize).collect();
    let row = sub_ext[2];
    for s in 0..n * c {
        let plane = s * ext[0] * ext[1] * ext[2];
        for z in 0..sub_ext[0] {
            for y in 0..sub_ext[1] {
                let start = plane + ((rel[0] + z) * ext[1] + rel[1] + y) * ext[2] + rel[2];
                out.extend_from_slice(&src[start..start + row]);
            }
        }
    }
}

/// Inverse of [`pack_box`]: write C-order `values` into the sub-box.
#[allow(clippy::too_many_arguments)]
pub(crate) fn unpack_box<T: Copy>(
    dst: &mut [T],
    n: usize,
    c: usize,
    origin: [isize; 3],
    ext: [usize; 3],
    sub_origin: [isize; 3],
    sub_ext: [usize; 3],
    values: &[T],
) {
    if sub_ext.contains(&0) {
        return;
    }
    let rel: Vec<usize> = (0..3).map(|k| (sub_origin[k] - origin[k]) as usize).collect();
    let row = sub_ext[2];
    let mut cursor = 0;
    for s in 0..n * c {
        let plane = s * ext[0] * ext[1] * ext[2];
        for z in 0..sub_ext[0] {
            for y in 0..sub_ext[1] {
                let start = plane + ((rel[0] + z) * ext[1] + rel[1] + y) * ext[2] + rel[2];
                dst[start..start + row].copy_from_slice(&values[cursor..cursor + row]);
                cursor += row;
            }
        }
    }
}
