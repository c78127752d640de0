use super::dense::{pack_box, unpack_box, Tensor5};
use super::partition::{DistTensorMeta, HaloFace};
use super::shape::{Region, Shape5D};
use super::TensorError;

/// Halo values received from one neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloSlab<T> {
    pub direction: [i8; 3],
    pub region: Region,
    pub values: Vec<T>,
}

/// One rank's share of a distributed tensor: the local block in C-order plus
/// any halo slabs received from neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct DistTensor<T> {
    meta: DistTensorMeta,
    rank: usize,
    pub data: Vec<T>,
    halos: Vec<HaloSlab<T>>,
}

/// A spatial box of a tensor in global coordinates that may reach outside the
/// global domain; voxels not backed by data are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub n: usize,
    pub c: usize,
    pub origin: [isize; 3],
    pub extent: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Copy> Block<T> {
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.extent[0] * self.extent[1] * self.extent[2]
    }

    /// Slice of one `(n, c)` volume.
    #[inline]
    pub fn volume(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let s = (n * self.c + c) * p;
        &self.data[s..s + p]
    }
}

impl<T: Copy + Default> DistTensor<T> {
    pub fn new(meta: DistTensorMeta, rank: usize, data: Vec<T>) -> Result<Self, TensorError> {
        let expected = meta.local_shape(rank).len();
        if data.len() != expected {
            return Err(TensorError::ShapeMismatch(format!(
                "rank {rank}: local buffer of {} elements, expected {expected}",
                data.len()
            )));
        }
        Ok(DistTensor { meta, rank, data, halos: Vec::new() })
    }

    pub fn zeros(meta: DistTensorMeta, rank: usize) -> Self {
        let len = meta.local_shape(rank).len();
        DistTensor { meta, rank, data: vec![T::default(); len], halos: Vec::new() }
    }

    /// Cut `rank`'s block out of a full tensor.
    pub fn scatter(global: &Tensor5<T>, meta: &DistTensorMeta, rank: usize) -> Result<Self, TensorError> {
        if global.shape != meta.global() {
            return Err(TensorError::ShapeMismatch(format!(
                "scatter of {} into layout of {}",
                global.shape,
                meta.global()
            )));
        }
        let samples = meta.samples(rank);
        let region = meta.region(rank);
        let g = global.shape;
        let per = g.sample_len();
        let src = &global.data[samples.start * per..samples.end * per];
        let mut data = Vec::with_capacity(meta.local_shape(rank).len());
        pack_box(src, samples.len(), g.c, [0; 3], g.spatial(), signed(region.offset), region.extent, &mut data);
        Ok(DistTensor { meta: meta.clone(), rank, data, halos: Vec::new() })
    }

    /// Reassemble the full tensor from every rank's part.
    pub fn gather(parts: &[DistTensor<T>]) -> Result<Tensor5<T>, TensorError> {
        let Some(first) = parts.first() else {
            return Err(TensorError::ShapeMismatch("gather of zero parts".into()));
        };
        let meta = &first.meta;
        if parts.len() != meta.ranks() {
            return Err(TensorError::ShapeMismatch(format!(
                "gather of {} parts for {} ranks",
                parts.len(),
                meta.ranks()
            )));
        }
        let g = meta.global();
        let mut out = Tensor5::zeros(g);
        let per = g.sample_len();
        for (rank, part) in parts.iter().enumerate() {
            if part.meta != *meta || part.rank != rank {
                return Err(TensorError::ShapeMismatch(format!(
                    "part {rank} has a different layout: {:?} vs {:?}, rank {}",
                    part.meta, meta, part.rank
                )));
            }
            let samples = meta.samples(rank);
            let region = meta.region(rank);
            let dst = &mut out.data[samples.start * per..samples.end * per];
            unpack_box(dst, samples.len(), g.c, [0; 3], g.spatial(), signed(region.offset), region.extent, &part.data);
        }
        Ok(out)
    }
}

impl<T> DistTensor<T> {
    pub fn meta(&self) -> &DistTensorMeta {
        &self.meta
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn local_shape(&self) -> Shape5D {
        self.meta.local_shape(self.rank)
    }

    pub fn region(&self) -> Region {
        self.meta.region(self.rank)
    }

    pub fn halos(&self) -> &[HaloSlab<T>] {
        &self.halos
    }

    pub fn clear_halos(&mut self) {
        self.halos.clear();
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Change the halo radii of the layout. Drops any received halos.
    pub fn set_radii(&mut self, radii: [usize; 3]) -> Result<(), TensorError> {
        if self.meta.radii() != radii {
            self.meta = self.meta.with_radii(radii)?;
        }
        self.halos.clear();
        Ok(())
    }

    /// Replace the local values, keeping the layout.
    pub fn with_data<U>(&self, data: Vec<U>) -> DistTensor<U> {
        DistTensor { meta: self.meta.clone(), rank: self.rank, data, halos: Vec::new() }
    }

    /// Same spatial layout with `c` channels.
    pub fn relabel_channels<U>(&self, c: usize, data: Vec<U>) -> DistTensor<U> {
        DistTensor { meta: self.meta.with_channels(c), rank: self.rank, data, halos: Vec::new() }
    }
}

impl<T: Copy + Default> DistTensor<T> {
    /// Pack the send slab of every face into a contiguous C-order buffer.
    pub fn pack_faces(&self, faces: &[HaloFace]) -> Result<Vec<Vec<T>>, TensorError> {
        let local = self.local_shape();
        let own = self.region();
        faces
            .iter()
            .map(|face| {
                if face.send.intersect(&own) != Some(face.send) && !face.send.is_empty() {
                    return Err(TensorError::ShapeMismatch(format!(
                        "send slab {:?} outside local region {own:?}",
                        face.send
                    )));
                }
                let mut buf = Vec::with_capacity(local.n * local.c * face.send.voxels());
                pack_box(
                    &self.data,
                    local.n,
                    local.c,
                    signed(own.offset),
                    own.extent,
                    signed(face.send.offset),
                    face.send.extent,
                    &mut buf,
                );
                Ok(buf)
            })
            .collect()
    }

    /// Store received buffers as halo slabs, replacing earlier halos.
    pub fn unpack_faces(&mut self, faces: &[HaloFace], buffers: Vec<Vec<T>>) -> Result<(), TensorError> {
        if faces.len() != buffers.len() {
            return Err(TensorError::ShapeMismatch(format!("{} buffers for {} faces", buffers.len(), faces.len())));
        }
        let local = self.local_shape();
        let mut halos = Vec::with_capacity(faces.len());
        for (face, values) in faces.iter().zip(buffers) {
            let expected = local.n * local.c * face.recv.voxels();
            if values.len() != expected {
                return Err(TensorError::ShapeMismatch(format!(
                    "halo buffer of {} elements for slab of {expected}",
                    values.len()
                )));
            }
            halos.push(HaloSlab { direction: face.direction, region: face.recv, values });
        }
        self.halos = halos;
        Ok(())
    }

    /// Local block grown by the halo radii, with received halos filled in and
    /// zeros everywhere else (outer domain faces and unexchanged halos).
    pub fn padded(&self) -> Block<T> {
        self.padded_by(self.meta.radii())
    }

    /// Like [`padded`](Self::padded) with explicit padding widths.
    pub fn padded_by(&self, pad: [usize; 3]) -> Block<T> {
        let local = self.local_shape();
        let own = self.region();
        let origin = [0, 1, 2].map(|k| own.offset[k] as isize - pad[k] as isize);
        let extent = [0, 1, 2].map(|k| own.extent[k] + 2 * pad[k]);
        let mut data = vec![T::default(); local.n * local.c * extent.iter().product::<usize>()];
        unpack_box(&mut data, local.n, local.c, origin, extent, signed(own.offset), own.extent, &self.data);
        for slab in &self.halos {
            // Only the part of a slab inside the padded box is needed.
            let mut sub = slab.region;
            let mut fits = true;
            for k in 0..3 {
                let lo = (slab.region.offset[k] as isize).max(origin[k]);
                let hi = (slab.region.end(k) as isize).min(origin[k] + extent[k] as isize);
                if hi <= lo {
                    fits = false;
                    break;
                }
                sub.offset[k] = lo as usize;
                sub.extent[k] = (hi - lo) as usize;
            }
            if !fits {
                continue;
            }
            if sub == slab.region {
                unpack_box(&mut data, local.n, local.c, origin, extent, signed(sub.offset), sub.extent, &slab.values);
            } else {
                let mut part = Vec::new();
                pack_box(
                    &slab.values,
                    local.n,
                    local.c,
                    signed(slab.region.offset),
                    slab.region.extent,
                    signed(sub.offset),
                    sub.extent,
                    &mut part,
                );
                unpack_box(&mut data, local.n, local.c, origin, extent, signed(sub.offset), sub.extent, &part);
            }
        }
        Block { n: local.n, c: local.c, origin, extent, data }
    }
}

pub(crate) fn signed(p: [usize; 3]) -> [isize; 3] {
    p.map(|v| v as isize)
}
