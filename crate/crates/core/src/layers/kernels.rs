//! Local convolution kernels on halo-padded blocks.
//!
//! Every kernel works in global voxel coordinates: the input [`Block`] knows
//! where it sits in the domain, and the output is described by a [`Region`].
//! For each output element, contributions are accumulated in the same order
//! as the reference kernels, so forward and backward-data results are
//! bit-identical to the serial oracle regardless of the partition.

use super::op::ConvParams;
use crate::real::Real;
use crate::tensor::{Block, Region};
use std::ops::Range;

/// Start of the strided input row that output row `o` (global) reads for
/// kernel tap `k`, relative to the block origin.
#[inline]
fn tap(s: usize, o: usize, k: usize, r: usize, origin: isize) -> isize {
    (s * o + k) as isize - r as isize - origin
}

/// Cap on the elements of one column buffer; larger problems are processed
/// in slabs of whole planes.
const COL_LIMIT: usize = 1 << 22;

/// Planes per slab so that a `rows x (cols_per_plane * planes)` buffer stays
/// under the cap.
fn slab_planes(rows: usize, cols_per_plane: usize, planes: usize) -> usize {
    (COL_LIMIT / (rows * cols_per_plane).max(1)).clamp(1, planes.max(1))
}

/// Row-block of the accumulating product: rows `i..i + R`, columns
/// `j..j + W`.
#[inline(always)]
fn tile<T: Real, const R: usize, const W: usize>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    i: usize,
    j: usize,
    k: usize,
    n: usize,
) {
    let mut acc = [[T::zero(); W]; R];
    let rows: [&[T]; R] = std::array::from_fn(|r| &a[(i + r) * k..][..k]);
    for (r, acc) in acc.iter_mut().enumerate() {
        acc.copy_from_slice(&c[(i + r) * n + j..][..W]);
    }
    for kk in 0..k {
        let bv: &[T; W] = b[kk * n + j..][..W].try_into().unwrap();
        for r in 0..R {
            let av = rows[r][kk];
            for l in 0..W {
                acc[r][l] += av * bv[l];
            }
        }
    }
    for (r, acc) in acc.iter().enumerate() {
        c[(i + r) * n + j..][..W].copy_from_slice(acc);
    }
}

#[inline(always)]
fn tile_rows<T: Real, const W: usize>(c: &mut [T], a: &[T], b: &[T], i: usize, m: usize, j: usize, k: usize, n: usize) {
    match m - i {
        1 => tile::<T, 1, W>(c, a, b, i, j, k, n),
        2 => tile::<T, 2, W>(c, a, b, i, j, k, n),
        3 => tile::<T, 3, W>(c, a, b, i, j, k, n),
        _ => tile::<T, 4, W>(c, a, b, i, j, k, n),
    }
}

/// `c[i][j] += sum_k a[i][k] * b[k][j]` for row-major `m x k`, `k x n` and
/// `m x n` matrices. Every element of `c` receives its products one at a
/// time in ascending `k`, exactly as a naive triple loop would.
fn gemm_acc<T: Real>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    const R: usize = 4;
    for i in (0..m).step_by(R) {
        let mut j = 0;
        while j + 16 <= n {
            tile_rows::<T, 16>(c, a, b, i, m, j, k, n);
            j += 16;
        }
        if j + 8 <= n {
            tile_rows::<T, 8>(c, a, b, i, m, j, k, n);
            j += 8;
        }
        while j < n {
            tile_rows::<T, 1>(c, a, b, i, m, j, k, n);
            j += 1;
        }
    }
}

/// Dot products `a[i] . b[kk]` over a long sequence that arrives in pieces,
/// summed exactly as a single [`dot`] over the whole sequence would be.
struct LaneDots<T> {
    lanes: Vec<[T; 8]>,
    tail: Vec<T>,
    k: usize,
    full: usize,
    pos: usize,
}

impl<T: Real> LaneDots<T> {
    fn new(m: usize, k: usize, total: usize) -> Self {
        LaneDots { lanes: vec![[T::zero(); 8]; m * k], tail: vec![T::zero(); m * k], k, full: total / 8 * 8, pos: 0 }
    }

    /// Next `len` elements of every sequence: rows of the `m x len` and
    /// `k x len` row-major matrices `a` and `b`.
    fn add(&mut self, a: &[T], b: &[T], len: usize) {
        const R: usize = 4;
        let (k, pos) = (self.k, self.pos);
        let m = self.lanes.len() / k.max(1);
        // Local ranges: unaligned head, aligned chunks, then tail elements.
        let lane_end = self.full.clamp(pos, pos + len) - pos;
        let head = ((8 - pos % 8) % 8).min(lane_end);
        let chunks = (lane_end - head) / 8;
        let body_end = head + chunks * 8;
        for i0 in (0..m).step_by(R) {
            let rn = R.min(m - i0);
            for kk in 0..k {
                let bv = &b[kk * len..][..len];
                let mut acc = [[T::zero(); 8]; R];
                for (r, acc) in acc.iter_mut().enumerate().take(rn) {
                    *acc = self.lanes[(i0 + r) * k + kk];
                }
                for q in 0..chunks {
                    let x: &[T; 8] = bv[head + q * 8..][..8].try_into().unwrap();
                    for (r, acc) in acc.iter_mut().enumerate().take(rn) {
                        let y: &[T; 8] = a[(i0 + r) * len + head + q * 8..][..8].try_into().unwrap();
                        for l in 0..8 {
                            acc[l] += y[l] * x[l];
                        }
                    }
                }
                for (r, acc) in acc.iter_mut().enumerate().take(rn) {
                    let arow = &a[(i0 + r) * len..][..len];
                    for q in (0..head).chain(body_end..lane_end) {
                        acc[(pos + q) % 8] += arow[q] * bv[q];
                    }
                    let t = &mut self.tail[(i0 + r) * k + kk];
                    for q in lane_end..len {
                        *t += arow[q] * bv[q];
                    }
                    self.lanes[(i0 + r) * k + kk] = *acc;
                }
            }
        }
        self.pos += len;
    }

    fn finish(self) -> Vec<T> {
        self.lanes
            .iter()
            .zip(&self.tail)
            .map(|(a, &t)| ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7])) + t)
            .collect()
    }
}

/// Unfolds the planes `d0..d0 + pd` of the output region for `samples` into
/// columns: row `(ci, a, b, c)`, column `(n, od, oh, ow)`.
fn im2col<T: Real>(
    xb: &Block<T>,
    p: &ConvParams,
    out: Region,
    samples: Range<usize>,
    d0: usize,
    pd: usize,
    col: &mut Vec<T>,
) {
    let [kd, kh, kw] = p.kernel;
    let [sd, sh, sw] = p.stride;
    let [rd, rh, rw] = p.pad();
    let [_, oh_n, ow_n] = out.extent;
    let ext = xb.extent;
    let per_n = pd * oh_n * ow_n;
    let cols = samples.len() * per_n;
    col.clear();
    col.resize(p.in_channels * kd * kh * kw * cols, T::zero());
    let mut row = 0;
    for ci in 0..p.in_channels {
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let x0 = tap(sw, out.offset[2], c, rw, xb.origin[2]) as usize;
                    let dst = &mut col[row * cols..][..cols];
                    for (j, n) in samples.clone().enumerate() {
                        let xv = xb.volume(n, ci);
                        for od in 0..pd {
                            let zd = tap(sd, out.offset[0] + d0 + od, a, rd, xb.origin[0]) as usize;
                            for oh in 0..oh_n {
                                let zh = tap(sh, out.offset[1] + oh, b, rh, xb.origin[1]) as usize;
                                let xrow = &xv[(zd * ext[1] + zh) * ext[2] + x0..];
                                let drow = &mut dst[j * per_n + (od * oh_n + oh) * ow_n..][..ow_n];
                                if sw == 1 {
                                    drow.copy_from_slice(&xrow[..ow_n]);
                                } else {
                                    for (ow, v) in drow.iter_mut().enumerate() {
                                        *v = xrow[sw * ow];
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Forward convolution of `xb` producing the output `out` region.
///
/// The block must cover every input voxel the region reads.
pub fn conv_forward<T: Real>(xb: &Block<T>, w: &[T], p: &ConvParams, out: Region) -> Vec<T> {
    let [od_n, oh_n, ow_n] = out.extent;
    let vol_out = out.voxels();
    let m = p.out_channels;
    let mut y = vec![T::zero(); xb.n * m * vol_out];
    if vol_out == 0 || xb.n == 0 {
        return y;
    }
    let k = p.weight_len() / m;
    let plane = oh_n * ow_n;
    let planes = slab_planes(k, xb.n * plane, od_n);
    let (mut col, mut acc) = (Vec::new(), Vec::new());
    for d0 in (0..od_n).step_by(planes) {
        let pd = planes.min(od_n - d0);
        im2col(xb, p, out, 0..xb.n, d0, pd, &mut col);
        let (per_n, cols) = (pd * plane, xb.n * pd * plane);
        acc.clear();
        acc.resize(m * cols, T::zero());
        gemm_acc(&mut acc, w, &col, m, k, cols);
        for n in 0..xb.n {
            for co in 0..m {
                y[(n * m + co) * vol_out + d0 * plane..][..per_n]
                    .copy_from_slice(&acc[co * cols + n * per_n..][..per_n]);
            }
        }
    }
    y
}

/// Backward-data pass: the gradient w.r.t. the input over `region`, from the
/// output gradient block `dyb` (which must cover every output voxel that
/// touches the region).
pub fn conv_backward_data<T: Real>(dyb: &Block<T>, w: &[T], p: &ConvParams, region: Region) -> Vec<T> {
    let [kd, kh, kw] = p.kernel;
    let [sd, sh, sw] = p.stride;
    let [rd, rh, rw] = p.pad();
    let [id_n, ih_n, iw_n] = region.extent;
    let ext = dyb.extent;
    let vol = region.voxels();
    let mut dx = vec![T::zero(); dyb.n * p.in_channels * vol];
    if vol == 0 {
        return dx;
    }
    // Output coordinate (relative to the block) feeding input `i` via tap
    // `k`, if the stride admits one.
    let src = |i: usize, k: usize, r: usize, s: usize, origin: isize| -> Option<usize> {
        let t = (i + r) as isize - k as isize;
        if t.rem_euclid(s as isize) != 0 {
            return None;
        }
        let o = t.div_euclid(s as isize) - origin;
        debug_assert!(o >= 0);
        Some(o as usize)
    };
    if p.stride == [1, 1, 1] {
        // Column row `(co, a, b, c)` holds the output gradient each input
        // voxel receives through that tap, so the product accumulates in the
        // oracle's order.
        let taps = kd * kh * kw;
        let (m, k) = (p.in_channels, p.out_channels * taps);
        let mut wt = vec![T::zero(); m * k];
        for co in 0..p.out_channels {
            for ci in 0..m {
                let src_w = &w[(co * m + ci) * taps..][..taps];
                wt[ci * k + co * taps..][..taps].copy_from_slice(src_w);
            }
        }
        let plane = ih_n * iw_n;
        let planes = slab_planes(k, dyb.n * plane, id_n);
        let (mut col, mut acc) = (Vec::new(), Vec::new());
        for d0 in (0..id_n).step_by(planes) {
            let pd = planes.min(id_n - d0);
            let (per_n, cols) = (pd * plane, dyb.n * pd * plane);
            col.clear();
            col.resize(k * cols, T::zero());
            let mut row = 0;
            for co in 0..p.out_channels {
                for a in 0..kd {
                    for b in 0..kh {
                        for c in 0..kw {
                            let z0 = src(region.offset[2], c, rw, 1, dyb.origin[2]).unwrap();
                            let dst = &mut col[row * cols..][..cols];
                            for n in 0..dyb.n {
                                let dv = dyb.volume(n, co);
                                for id in 0..pd {
                                    let zd = src(region.offset[0] + d0 + id, a, rd, 1, dyb.origin[0]).unwrap();
                                    for ih in 0..ih_n {
                                        let zh = src(region.offset[1] + ih, b, rh, 1, dyb.origin[1]).unwrap();
                                        let drow = &dv[(zd * ext[1] + zh) * ext[2] + z0..][..iw_n];
                                        dst[n * per_n + (id * ih_n + ih) * iw_n..][..iw_n].copy_from_slice(drow);
                                    }
                                }
                            }
                            row += 1;
                        }
                    }
                }
            }
            acc.clear();
            acc.resize(m * cols, T::zero());
            gemm_acc(&mut acc, &wt, &col, m, k, cols);
            for n in 0..dyb.n {
                for ci in 0..m {
                    dx[(n * m + ci) * vol + d0 * plane..][..per_n]
                        .copy_from_slice(&acc[ci * cols + n * per_n..][..per_n]);
                }
            }
        }
        return dx;
    }
    for n in 0..dyb.n {
        for ci in 0..p.in_channels {
            let xv = &mut dx[(n * p.in_channels + ci) * vol..][..vol];
            for co in 0..p.out_channels {
                let dv = dyb.volume(n, co);
                let wbase = (co * p.in_channels + ci) * kd * kh * kw;
                for a in 0..kd {
                    for b in 0..kh {
                        for c in 0..kw {
                            let wt = w[wbase + (a * kh + b) * kw + c];
                            for id in 0..id_n {
                                let Some(zd) = src(region.offset[0] + id, a, rd, sd, dyb.origin[0]) else {
                                    continue;
                                };
                                for ih in 0..ih_n {
                                    let Some(zh) = src(region.offset[1] + ih, b, rh, sh, dyb.origin[1]) else {
                                        continue;
                                    };
                                    let drow = &dv[(zd * ext[1] + zh) * ext[2]..][..ext[2]];
                                    let xrow = &mut xv[(id * ih_n + ih) * iw_n..][..iw_n];
                                    if sw == 1 {
                                        let z0 = src(region.offset[2], c, rw, 1, dyb.origin[2]).unwrap();
                                        for (xo, &d) in xrow.iter_mut().zip(&drow[z0..z0 + iw_n]) {
                                            *xo += wt * d;
                                        }
                                    } else {
                                        for (iw, xo) in xrow.iter_mut().enumerate() {
                                            if let Some(z) = src(region.offset[2] + iw, c, rw, sw, dyb.origin[2]) {
                                                *xo += wt * drow[z];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order. Deterministic for a given length.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Local backward-filter partial: `dw[co,ci,k] = sum dy[n,co,o] x[n,ci,s*o+k-r]`
/// over this block's samples and the output `region` of `dy`. Each weight is
/// one [`dot`] over the `(n, od, oh, ow)` sequence, which is consumed in
/// slabs of whole samples or, for large samples, of whole planes.
pub fn conv_backward_filter<T: Real>(xb: &Block<T>, dy: &[T], p: &ConvParams, region: Region) -> Vec<T> {
    let [od_n, oh_n, ow_n] = region.extent;
    let vol = region.voxels();
    if vol == 0 || xb.n == 0 {
        return vec![T::zero(); p.weight_len()];
    }
    let m = p.out_channels;
    let k = p.weight_len() / m;
    let plane = oh_n * ow_n;
    let mut slabs = Vec::new();
    let per_slab = COL_LIMIT / (k * vol);
    if per_slab >= 1 {
        for n0 in (0..xb.n).step_by(per_slab) {
            slabs.push((n0..xb.n.min(n0 + per_slab), 0, od_n));
        }
    } else {
        let planes = slab_planes(k, plane, od_n);
        for n in 0..xb.n {
            for d0 in (0..od_n).step_by(planes) {
                slabs.push((n..n + 1, d0, planes.min(od_n - d0)));
            }
        }
    }
    let mut dots = LaneDots::new(m, k, xb.n * vol);
    let (mut col, mut rows) = (Vec::new(), Vec::new());
    for (samples, d0, pd) in slabs {
        let per_n = pd * plane;
        let cols = samples.len() * per_n;
        im2col(xb, p, region, samples.clone(), d0, pd, &mut col);
        rows.clear();
        rows.resize(m * cols, T::zero());
        for (j, n) in samples.enumerate() {
            for co in 0..m {
                rows[co * cols + j * per_n..][..per_n].copy_from_slice(&dy[(n * m + co) * vol + d0 * plane..][..per_n]);
            }
        }
        dots.add(&rows, &col, cols);
    }
    dots.finish()
}
