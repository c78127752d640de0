use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TensorError;

/// Global extents of a 5D `(N, C, D, H, W)` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape5D {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5D {
    pub fn new(n: usize, c: usize, d: usize, h: usize, w: usize) -> Result<Self, TensorError> {
        let shape = Shape5D { n, c, d, h, w };
        if [n, c, d, h, w].contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        Ok(shape)
    }

    /// Cube-shaped sample batch: `n` samples of `c x width^3`.
    pub fn cube(n: usize, c: usize, width: usize) -> Self {
        Shape5D { n, c, d: width, h: width, w: width }
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn with_spatial(self, s: [usize; 3]) -> Self {
        Shape5D { d: s[0], h: s[1], w: s[2], ..self }
    }

    pub fn with_n(self, n: usize) -> Self {
        Shape5D { n, ..self }
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape5D { c, ..self }
    }

    /// Spatial voxel count `D*H*W`.
    pub fn voxels(&self) -> usize {
        self.d * self.h * self.w
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.n * self.c * self.voxels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample element count `C*D*H*W`.
    pub fn sample_len(&self) -> usize {
        self.c * self.voxels()
    }

    /// Row-major linear index of `(n, c, d, h, w)`.
    #[inline]
    pub fn index(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        (((n * self.c + c) * self.d + d) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape5D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}x{}", self.n, self.c, self.d, self.h, self.w)
    }
}

/// Process grid: `groups` data-parallel groups, each splitting one sample's
/// spatial domain `pd x ph x pw` ways.
///
/// Ranks are numbered row-major with W fastest and the group index slowest:
/// `rank = ((group * pd + gd) * ph + gh) * pw + gw`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessGrid {
    pub groups: usize,
    pub pd: usize,
    pub ph: usize,
    pub pw: usize,
}

/// Position of a rank inside a [`ProcessGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridCoord {
    pub group: usize,
    pub spatial: [usize; 3],
}

impl ProcessGrid {
    pub fn new(groups: usize, pd: usize, ph: usize, pw: usize) -> Result<Self, TensorError> {
        let grid = ProcessGrid { groups, pd, ph, pw };
        if [groups, pd, ph, pw].contains(&0) {
            return Err(TensorError::EmptyGrid(grid));
        }
        Ok(grid)
    }

    pub fn single() -> Self {
        ProcessGrid { groups: 1, pd: 1, ph: 1, pw: 1 }
    }

    pub fn parts(&self) -> [usize; 3] {
        [self.pd, self.ph, self.pw]
    }

    /// Ranks per data-parallel group.
    pub fn spatial_ranks(&self) -> usize {
        self.pd * self.ph * self.pw
    }

    pub fn ranks(&self) -> usize {
        self.groups * self.spatial_ranks()
    }

    pub fn is_spatially_split(&self) -> bool {
        self.spatial_ranks() > 1
    }

    pub fn coord(&self, rank: usize) -> GridCoord {
        debug_assert!(rank < self.ranks());
        let gw = rank % self.pw;
        let rest = rank / self.pw;
        let gh = rest % self.ph;
        let rest = rest / self.ph;
        let gd = rest % self.pd;
        let group = rest / self.pd;
        GridCoord { group, spatial: [gd, gh, gw] }
    }

    pub fn rank_of(&self, coord: GridCoord) -> usize {
        let [gd, gh, gw] = coord.spatial;
        ((coord.group * self.pd + gd) * self.ph + gh) * self.pw + gw
    }

    /// Ranks of one data-parallel group, ascending.
    pub fn group_ranks(&self, group: usize) -> Vec<usize> {
        let p = self.spatial_ranks();
        (group * p..(group + 1) * p).collect()
    }
}

impl fmt::Display for ProcessGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.groups, self.pd, self.ph, self.pw)
    }
}

impl FromStr for ProcessGrid {
    type Err = TensorError;

    /// Parses `GxPDxPHxPW`, e.g. `2x4x1x1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| TensorError::BadGridSyntax(s.to_string()))?;
        match parts[..] {
            [g, pd, ph, pw] => ProcessGrid::new(g, pd, ph, pw),
            _ => Err(TensorError::BadGridSyntax(s.to_string())),
        }
    }
}

/// Axis-aligned spatial box `[offset, offset + extent)` per D/H/W dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Region {
    pub offset: [usize; 3],
    pub extent: [usize; 3],
}

impl Region {
    pub fn new(offset: [usize; 3], extent: [usize; 3]) -> Self {
        Region { offset, extent }
    }

    pub fn whole(spatial: [usize; 3]) -> Self {
        Region { offset: [0; 3], extent: spatial }
    }

    pub fn end(&self, dim: usize) -> usize {
        self.offset[dim] + self.extent[dim]
    }

    pub fn voxels(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels() == 0
    }

    pub fn within(&self, spatial: [usize; 3]) -> bool {
        (0..3).all(|k| self.end(k) <= spatial[k])
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.offset[k] && p[k] < self.end(k))
    }

    pub fn intersect(&self, other: &Region) -> Option<Region> {
        let mut out = Region::default();
        for k in 0..3 {
            let lo = self.offset[k].max(other.offset[k]);
            let hi = self.end(k).min(other.end(k));
            if hi <= lo {
                return None;
            }
            out.offset[k] = lo;
            out.extent[k] = hi - lo;
        }
        Some(out)
    }
}

/// Block decomposition of `extent` voxels into `parts` equal pieces.
pub fn split_extent(extent: usize, parts: usize) -> Result<Vec<(usize, usize)>, TensorError> {
    if parts == 0 || !extent.is_multiple_of(parts) || extent == 0 {
        return Err(TensorError::NonDivisible { extent, parts });
    }
    let block = extent / parts;
    Ok((0..parts).map(|i| (i * block, block)).collect())
}
