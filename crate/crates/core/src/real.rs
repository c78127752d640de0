use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors: `f32` for training runs, `f64`
/// for oracle comparisons.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const BYTES: usize;
    const NAME: &'static str;

    fn from_f64c(x: f64) -> Self;

    fn to_f64c(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;
    const NAME: &'static str = "fp32";

    #[inline]
    fn from_f64c(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64c(self) -> f64 {
        self as f64
    }

    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const BYTES: usize = 8;
    const NAME: &'static str = "fp64";

    #[inline]
    fn from_f64c(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64c(self) -> f64 {
        self
    }

    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Encode a slice as little-endian bytes.
pub fn encode<T: Real>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

/// Decode little-endian bytes produced by [`encode`].
pub fn decode<T: Real>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(T::BYTES).map(T::read_le).collect()
}

/// `max |a - b|` over two equally long slices.
pub fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.to_f64c() - y.to_f64c()).abs()).fold(0.0, f64::max)
}

/// `max |a - b| / max |b|`, with the denominator floored at `f64::MIN_POSITIVE`.
pub fn max_rel_diff<T: Real>(a: &[T], b: &[T]) -> f64 {
    let scale = b.iter().map(|y| y.to_f64c().abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    max_abs_diff(a, b) / scale
}
