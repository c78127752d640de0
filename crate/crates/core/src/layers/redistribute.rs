use std::ops::Range;

use crate::error::{Error, Result};
use crate::fabric::{tags, Comm, TrafficClass};
use crate::real::{decode, encode, Real};
use crate::tensor::{pack_box, signed, unpack_box, DistTensor, DistTensorMeta, Region};

fn overlap(a: &Range<usize>, b: &Range<usize>) -> Option<Range<usize>> {
    let r = a.start.max(b.start)..a.end.min(b.end);
    (r.start < r.end).then_some(r)
}

/// Samples and voxels that rank `src` holds under `from` and rank `dst`
/// needs under `to`.
fn piece(from: &DistTensorMeta, src: usize, to: &DistTensorMeta, dst: usize) -> Option<(Range<usize>, Region)> {
    let samples = overlap(&from.samples(src), &to.samples(dst))?;
    let region = from.region(src).intersect(&to.region(dst))?;
    (!region.is_empty()).then_some((samples, region))
}

fn pack<T: Copy>(x: &DistTensor<T>, samples: &Range<usize>, region: Region) -> Vec<T> {
    let meta = x.meta();
    let local = x.local_shape();
    let own = x.region();
    let per = local.c * local.voxels();
    let first = samples.start - meta.samples(x.rank()).start;
    let src = &x.data[first * per..(first + samples.len()) * per];
    let mut out = Vec::with_capacity(samples.len() * local.c * region.voxels());
    pack_box(
        src,
        samples.len(),
        local.c,
        signed(own.offset),
        own.extent,
        signed(region.offset),
        region.extent,
        &mut out,
    );
    out
}

fn unpack<T: Copy>(y: &mut DistTensor<T>, samples: &Range<usize>, region: Region, values: &[T]) {
    let local = y.local_shape();
    let own = y.region();
    let per = local.c * local.voxels();
    let first = samples.start - y.meta().samples(y.rank()).start;
    let dst = &mut y.data[first * per..(first + samples.len()) * per];
    unpack_box(
        dst,
        samples.len(),
        local.c,
        signed(own.offset),
        own.extent,
        signed(region.offset),
        region.extent,
        values,
    );
}

/// Move `x` into the layout `target` (same global shape). Each rank sends
/// every other rank the part of its block that rank needs; the overlap with
/// its own new block is copied locally. Halos are dropped.
pub fn redistribute<T: Real>(comm: &Comm, x: &DistTensor<T>, target: &DistTensorMeta) -> Result<DistTensor<T>> {
    let from = x.meta();
    if from.global() != target.global() || from.ranks() != target.ranks() {
        return Err(Error::ShapeMismatch(format!(
            "redistribute {} over {} ranks into {} over {} ranks",
            from.global(),
            from.ranks(),
            target.global(),
            target.ranks()
        )));
    }
    let me = comm.rank();
    let target = target.with_radii([0; 3])?;
    let mut y = DistTensor::zeros(target.clone(), me);
    for dst in 0..target.ranks() {
        if dst == me {
            continue;
        }
        if let Some((samples, region)) = piece(from, me, &target, dst) {
            let values = pack(x, &samples, region);
            comm.send_class(dst, tags::REDISTRIBUTE, encode(&values), TrafficClass::Redistribute)?;
        }
    }
    if let Some((samples, region)) = piece(from, me, &target, me) {
        let values = pack(x, &samples, region);
        unpack(&mut y, &samples, region, &values);
    }
    for src in 0..from.ranks() {
        if src == me {
            continue;
        }
        if let Some((samples, region)) = piece(from, src, &target, me) {
            let values = decode::<T>(&comm.recv_class(src, tags::REDISTRIBUTE)?);
            if values.len() != samples.len() * target.global().c * region.voxels() {
                return Err(Error::ShapeMismatch(format!(
                    "redistribute message of {} values from {src}",
                    values.len()
                )));
            }
            unpack(&mut y, &samples, region, &values);
        }
    }
    Ok(y)
}
