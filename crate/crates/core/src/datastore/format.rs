use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::counters::IoCounters;
use super::DataError;
use crate::real::Real;
use crate::tensor::{hyperslab_byte_ranges, Region};

pub const MAGIC: [u8; 4] = *b"HSB1";
pub const VERSION: u8 = 1;
/// Fixed header: magic, version, dtype code, reserved `u16`, then 16
/// reserved zero bytes.
pub const HEADER_BYTES: usize = 24;
/// Four little-endian `u64` dims `(C, D, H, W)`.
pub const DIMS_BYTES: usize = 32;
pub const PAYLOAD_OFFSET: usize = HEADER_BYTES + DIMS_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    Int16,
    Fp32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::Int16 => 0,
            Dtype::Fp32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::Int16),
            1 => Some(Dtype::Fp32),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Dtype::Int16 => 2,
            Dtype::Fp32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleHeader {
    pub dtype: Dtype,
    pub dims: [usize; 4],
}

impl SampleHeader {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.voxels() * self.dtype.bytes()) as u64
    }

    pub fn file_bytes(&self) -> u64 {
        PAYLOAD_OFFSET as u64 + self.payload_bytes()
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PAYLOAD_OFFSET);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.dtype.code());
        out.extend_from_slice(&[0; HEADER_BYTES - 6]);
        for d in self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out
    }
}

/// Write a sample; `payload` holds little-endian voxels in C-order.
pub fn write_sample(path: &Path, dims: [usize; 4], dtype: Dtype, payload: &[u8]) -> Result<(), DataError> {
    let header = SampleHeader { dtype, dims };
    if payload.len() as u64 != header.payload_bytes() {
        return Err(DataError::io(
            path,
            format!("payload of {} bytes for dims {dims:?} ({} expected)", payload.len(), header.payload_bytes()),
        ));
    }
    let mut f = File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&header.encode()).and_then(|_| f.write_all(payload)).map_err(|e| DataError::io(path, e))
}

fn open_checked(path: &Path) -> Result<(File, SampleHeader), DataError> {
    let mut f = File::open(path).map_err(|e| DataError::io(path, e))?;
    let actual = f.metadata().map_err(|e| DataError::io(path, e))?.len();
    let mut head = [0u8; PAYLOAD_OFFSET];
    if actual < PAYLOAD_OFFSET as u64 {
        return Err(DataError::io(
            path,
            format!("file is {actual} bytes, shorter than the {PAYLOAD_OFFSET}-byte header"),
        ));
    }
    f.read_exact(&mut head).map_err(|e| DataError::io(path, e))?;
    let found: [u8; 4] = head[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(DataError::BadMagic { path: path.into(), found });
    }
    if head[4] != VERSION {
        return Err(DataError::BadVersion { path: path.into(), found: head[4] });
    }
    let dtype = Dtype::from_code(head[5]).ok_or(DataError::BadDtype { path: path.into(), found: head[5] })?;
    let dims: [usize; 4] = std::array::from_fn(|k| {
        u64::from_le_bytes(head[HEADER_BYTES + 8 * k..HEADER_BYTES + 8 * k + 8].try_into().unwrap()) as usize
    });
    let header = SampleHeader { dtype, dims };
    if actual != header.file_bytes() {
        return Err(DataError::io(
            path,
            format!("expected {} bytes for dims {dims:?}, file has {actual}", header.file_bytes()),
        ));
    }
    Ok((f, header))
}

pub fn read_header(path: &Path) -> Result<SampleHeader, DataError> {
    Ok(open_checked(path)?.1)
}

/// Whole payload as raw little-endian bytes.
pub fn read_sample(path: &Path) -> Result<(SampleHeader, Vec<u8>), DataError> {
    let (mut f, header) = open_checked(path)?;
    let mut payload = Vec::with_capacity(header.payload_bytes() as usize);
    f.read_to_end(&mut payload).map_err(|e| DataError::io(path, e))?;
    Ok((header, payload))
}

/// Read the voxels of `region` for every channel, touching only the byte
/// runs that cover it. Counts one open and the payload bytes read.
pub fn read_hyperslab(
    path: &Path,
    region: &Region,
    counters: &IoCounters,
    epoch: usize,
) -> Result<(SampleHeader, Vec<u8>), DataError> {
    let (mut f, header) = open_checked(path)?;
    counters.record_open(epoch);
    let runs = hyperslab_byte_ranges(header.dims, region, header.dtype.bytes())
        .map_err(|e| DataError::OutOfBounds(format!("{}: {e}", path.display())))?;
    let total: u64 = runs.iter().map(|r| r.len).sum();
    let mut out = vec![0u8; total as usize];
    let mut at = 0;
    for r in runs {
        f.seek(SeekFrom::Start(PAYLOAD_OFFSET as u64 + r.offset)).map_err(|e| DataError::io(path, e))?;
        f.read_exact(&mut out[at..at + r.len as usize]).map_err(|e| DataError::io(path, e))?;
        at += r.len as usize;
    }
    counters.record_read(epoch, total);
    Ok((header, out))
}

/// Convert raw little-endian voxels to `T`.
pub fn decode_voxels<T: Real>(dtype: Dtype, bytes: &[u8]) -> Vec<T> {
    match dtype {
        Dtype::Int16 => bytes.chunks_exact(2).map(|b| T::from_f64c(i16::from_le_bytes([b[0], b[1]]) as f64)).collect(),
        Dtype::Fp32 => {
            bytes.chunks_exact(4).map(|b| T::from_f64c(f32::from_le_bytes(b.try_into().unwrap()) as f64)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<u8> {
        (0..n as i16).flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn roundtrip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.hsb");
        let payload = ramp(64);
        write_sample(&p, [1, 4, 4, 4], Dtype::Int16, &payload).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 24 + 32 + 128);
        assert_eq!(&bytes[..6], b"HSB1\x01\x00");
        assert_eq!(u64::from_le_bytes(bytes[24 + 8..24 + 16].try_into().unwrap()), 4);
        let (h, back) = read_sample(&p).unwrap();
        assert_eq!(h, SampleHeader { dtype: Dtype::Int16, dims: [1, 4, 4, 4] });
        assert_eq!(back, payload);
    }

    #[test]
    fn depth_slab_reads_64_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.hsb");
        let payload = ramp(64);
        write_sample(&p, [1, 4, 4, 4], Dtype::Int16, &payload).unwrap();
        let io = IoCounters::new();
        let (_, slab) = read_hyperslab(&p, &Region::new([2, 0, 0], [2, 4, 4]), &io, 0).unwrap();
        assert_eq!(slab, payload[64..128]);
        assert_eq!(io.total().file_bytes_read, 64);
        assert_eq!(io.total().file_opens, 1);
        let (_, whole) = read_hyperslab(&p, &Region::whole([4, 4, 4]), &io, 0).unwrap();
        assert_eq!(whole, payload);
        assert!(matches!(
            read_hyperslab(&p, &Region::new([3, 0, 0], [2, 4, 4]), &io, 0),
            Err(DataError::OutOfBounds(_))
        ));
    }

    #[test]
    fn corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.hsb");
        write_sample(&p, [1, 2, 2, 2], Dtype::Fp32, &[0; 32]).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        let err = read_header(&p).unwrap_err().to_string();
        assert!(err.contains("expected 88") && err.contains("87"), "{err}");
        bytes[4] = 2;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_header(&p), Err(DataError::BadVersion { found: 2, .. })));
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_header(&p), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn gib_sample() {
        let h = SampleHeader { dtype: Dtype::Int16, dims: [4, 512, 512, 512] };
        assert_eq!(h.payload_bytes(), 1 << 30);
    }
}
