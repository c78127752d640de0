use super::shape::Region;
use super::TensorError;

/// A contiguous byte run `[offset, offset + len)` inside a voxel payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteRange {
    pub offset: u64,
    pub len: u64,
}

/// Byte runs of a stored `(C, D, H, W)` array (C-order, W fastest) that cover
/// exactly `region` for every channel.
///
/// Runs are maximal (adjacent runs are merged) and returned in ascending
/// offset order, relative to the start of the voxel payload.
pub fn hyperslab_byte_ranges(
    dims: [usize; 4],
    region: &Region,
    elem_bytes: usize,
) -> Result<Vec<ByteRange>, TensorError> {
    let [c, d, h, w] = dims;
    if !region.within([d, h, w]) {
        return Err(TensorError::OutOfBounds(format!("region {region:?} outside file dims {dims:?}")));
    }
    let mut runs: Vec<ByteRange> = Vec::new();
    if region.is_empty() {
        return Ok(runs);
    }
    let run_len = (region.extent[2] * elem_bytes) as u64;
    for ch in 0..c {
        for z in region.offset[0]..region.end(0) {
            for y in region.offset[1]..region.end(1) {
                let first = ((ch * d + z) * h + y) * w + region.offset[2];
                let offset = (first * elem_bytes) as u64;
                match runs.last_mut() {
                    Some(last) if last.offset + last.len == offset => last.len += run_len,
                    _ => runs.push(ByteRange { offset, len: run_len }),
                }
            }
        }
    }
    Ok(runs)
}
