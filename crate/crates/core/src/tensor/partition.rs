use std::ops::Range;

use super::shape::{split_extent, GridCoord, ProcessGrid, Region, Shape5D};
use super::TensorError;

/// Widest halo supported (5^3 kernels).
pub const MAX_HALO: usize = 2;

/// Placement of a global 5D tensor on a process grid.
///
/// Samples are split across data-parallel groups, spatial dimensions across
/// the ranks of a group. N and C are never split spatially.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DistTensorMeta {
    global: Shape5D,
    grid: ProcessGrid,
    radii: [usize; 3],
    uneven_batch: bool,
}

/// Build the spatial partition of `shape` over `grid` with halo `radii`.
pub fn make_partition(shape: Shape5D, grid: ProcessGrid, radii: [usize; 3]) -> Result<DistTensorMeta, TensorError> {
    if !shape.n.is_multiple_of(grid.groups) {
        return Err(TensorError::BatchIndivisible { n: shape.n, groups: grid.groups });
    }
    let spatial = shape.spatial();
    let parts = grid.parts();
    for k in 0..3 {
        split_extent(spatial[k], parts[k])?;
    }
    let meta = DistTensorMeta { global: shape, grid, radii: [0; 3], uneven_batch: false };
    meta.with_radii(radii)
}

/// Sample-parallel layout over `ranks` ranks: every rank holds whole samples,
/// rank `r` getting the block `[r*N/R, (r+1)*N/R)`. Ranks may hold zero
/// samples when `N < R`.
pub fn sample_parallel(shape: Shape5D, ranks: usize) -> DistTensorMeta {
    DistTensorMeta {
        global: shape,
        grid: ProcessGrid { groups: ranks.max(1), pd: 1, ph: 1, pw: 1 },
        radii: [0; 3],
        uneven_batch: true,
    }
}

/// One neighbor pair of a halo exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaloFace {
    pub neighbor: usize,
    /// Offset of the neighbor in grid coordinates, each component in -1..=1.
    pub direction: [i8; 3],
    /// Boundary layer of this rank shipped to the neighbor (global coords).
    pub send: Region,
    /// Halo region adjoining this rank, filled from the neighbor.
    pub recv: Region,
}

impl HaloFace {
    /// Index of `direction` in `0..27`.
    pub fn direction_index(&self) -> usize {
        direction_index(self.direction)
    }
}

pub fn direction_index(dir: [i8; 3]) -> usize {
    dir.iter().fold(0usize, |acc, &d| acc * 3 + (d + 1) as usize)
}

impl DistTensorMeta {
    pub fn global(&self) -> Shape5D {
        self.global
    }

    pub fn grid(&self) -> ProcessGrid {
        self.grid
    }

    pub fn radii(&self) -> [usize; 3] {
        self.radii
    }

    pub fn ranks(&self) -> usize {
        self.grid.ranks()
    }

    /// True for the layout produced by [`sample_parallel`].
    pub fn is_sample_parallel(&self) -> bool {
        self.uneven_batch
    }

    /// Same placement, different halo radii.
    pub fn with_radii(&self, radii: [usize; 3]) -> Result<Self, TensorError> {
        let spatial = self.global.spatial();
        let parts = self.grid.parts();
        for k in 0..3 {
            let local = spatial[k] / parts[k];
            if radii[k] > MAX_HALO || (parts[k] > 1 && radii[k] > local) {
                return Err(TensorError::HaloTooWide { dim: k, radius: radii[k], local });
            }
        }
        Ok(DistTensorMeta { radii, ..self.clone() })
    }

    /// The same grid applied to a tensor of `c` channels and `spatial` extents
    /// (the output of a layer). Radii are reset to zero.
    pub fn reshaped(&self, c: usize, spatial: [usize; 3]) -> Result<Self, TensorError> {
        let global = self.global.with_c(c).with_spatial(spatial);
        if self.uneven_batch {
            Ok(sample_parallel(global, self.grid.ranks()))
        } else {
            make_partition(global, self.grid, [0; 3])
        }
    }

    /// Same placement for a tensor with another channel count.
    pub fn with_channels(&self, c: usize) -> Self {
        DistTensorMeta { global: self.global.with_c(c), ..self.clone() }
    }

    /// Global sample range held by `rank`.
    pub fn samples(&self, rank: usize) -> Range<usize> {
        let g = self.grid.coord(rank).group;
        let (n, groups) = (self.global.n, self.grid.groups);
        (g * n / groups)..((g + 1) * n / groups)
    }

    /// Spatial region owned by `rank`.
    pub fn region(&self, rank: usize) -> Region {
        let coord = self.grid.coord(rank);
        let spatial = self.global.spatial();
        let parts = self.grid.parts();
        let mut region = Region::default();
        for k in 0..3 {
            let block = spatial[k] / parts[k];
            region.offset[k] = coord.spatial[k] * block;
            region.extent[k] = block;
        }
        region
    }

    /// Shape of `rank`'s local block (without halos).
    pub fn local_shape(&self, rank: usize) -> Shape5D {
        let r = self.region(rank);
        Shape5D { n: self.samples(rank).len(), c: self.global.c, d: r.extent[0], h: r.extent[1], w: r.extent[2] }
    }

    /// Neighbor pairs of `rank` for a halo exchange with the current radii.
    ///
    /// Face, edge and corner neighbors are all included so that a local
    /// stencil sees every voxel within the radius. Outer domain faces yield
    /// no pair; those halos are zero padding.
    pub fn halo_faces(&self, rank: usize) -> Vec<HaloFace> {
        let coord = self.grid.coord(rank);
        let parts = self.grid.parts();
        let own = self.region(rank);
        let mut faces = Vec::new();
        for dd in -1i8..=1 {
            for dh in -1i8..=1 {
                for dw in -1i8..=1 {
                    let dir = [dd, dh, dw];
                    if dir == [0, 0, 0] {
                        continue;
                    }
                    let mut neighbor = coord.spatial;
                    let mut valid = true;
                    for k in 0..3 {
                        if dir[k] == 0 {
                            continue;
                        }
                        let pos = coord.spatial[k] as isize + dir[k] as isize;
                        if self.radii[k] == 0 || parts[k] == 1 || pos < 0 || pos >= parts[k] as isize {
                            valid = false;
                            break;
                        }
                        neighbor[k] = pos as usize;
                    }
                    if !valid {
                        continue;
                    }
                    let mut send = own;
                    let mut recv = own;
                    for k in 0..3 {
                        let r = self.radii[k];
                        match dir[k] {
                            -1 => {
                                send.extent[k] = r;
                                recv.offset[k] = own.offset[k] - r;
                                recv.extent[k] = r;
                            }
                            1 => {
                                send.offset[k] = own.end(k) - r;
                                send.extent[k] = r;
                                recv.offset[k] = own.end(k);
                                recv.extent[k] = r;
                            }
                            _ => {}
                        }
                    }
                    faces.push(HaloFace {
                        neighbor: self.grid.rank_of(GridCoord { group: coord.group, spatial: neighbor }),
                        direction: dir,
                        send,
                        recv,
                    });
                }
            }
        }
        faces
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize, w: usize) -> Shape5D {
        Shape5D::cube(n, 1, w)
    }

    #[test]
    fn sixteen_gpus_two_way_depth() {
        let shape = Shape5D::new(8, 4, 512, 512, 512).unwrap();
        let grid = ProcessGrid::new(8, 2, 1, 1).unwrap();
        let meta = make_partition(shape, grid, [1, 1, 1]).unwrap();
        assert_eq!(meta.ranks(), 16);
        for r in 0..16 {
            let region = meta.region(r);
            assert_eq!(region.extent, [256, 512, 512]);
            assert_eq!(region.offset[0], 256 * (r % 2));
            assert_eq!(meta.samples(r), (r / 2)..(r / 2 + 1));
        }
    }

    #[test]
    fn identity_grid_is_whole_domain() {
        let meta = make_partition(cube(2, 8), ProcessGrid::single(), [0; 3]).unwrap();
        assert_eq!(meta.region(0), Region::whole([8, 8, 8]));
        assert_eq!(meta.local_shape(0), cube(2, 8));
    }

    #[test]
    fn depth_four_way_regions_and_halos() {
        let meta = make_partition(cube(1, 16), ProcessGrid::new(1, 4, 1, 1).unwrap(), [1, 0, 0]).unwrap();
        let offsets: Vec<usize> = (0..4).map(|r| meta.region(r).offset[0]).collect();
        assert_eq!(offsets, vec![0, 4, 8, 12]);
        let counts: Vec<usize> = (0..4).map(|r| meta.halo_faces(r).len()).collect();
        assert_eq!(counts, vec![1, 2, 2, 1]);
        for r in 0..4 {
            for f in meta.halo_faces(r) {
                assert_eq!(f.send.extent, [1, 16, 16]);
                assert_eq!(f.recv.extent, [1, 16, 16]);
            }
        }
    }

    #[test]
    fn two_way_face_geometry() {
        let meta = make_partition(cube(1, 16), ProcessGrid::new(1, 2, 1, 1).unwrap(), [1, 1, 1]).unwrap();
        let faces = meta.halo_faces(0);
        assert_eq!(faces.len(), 1);
        assert_eq!(faces[0].neighbor, 1);
        assert_eq!(faces[0].send, Region::new([7, 0, 0], [1, 16, 16]));
        assert_eq!(faces[0].recv, Region::new([8, 0, 0], [1, 16, 16]));
    }

    #[test]
    fn zero_radii_no_faces() {
        let meta = make_partition(cube(1, 16), ProcessGrid::new(1, 4, 1, 1).unwrap(), [0; 3]).unwrap();
        assert!((0..4).all(|r| meta.halo_faces(r).is_empty()));
    }

    #[test]
    fn corner_neighbors_on_hw_grid() {
        let meta = make_partition(cube(1, 8), ProcessGrid::new(1, 1, 2, 2).unwrap(), [1, 1, 1]).unwrap();
        let faces = meta.halo_faces(0);
        assert_eq!(faces.len(), 3);
        let diag = faces.iter().find(|f| f.direction == [0, 1, 1]).unwrap();
        assert_eq!(diag.neighbor, 3);
        assert_eq!(diag.recv, Region::new([0, 4, 4], [8, 1, 1]));
    }

    #[test]
    fn errors() {
        let shape = cube(3, 16);
        assert_eq!(
            make_partition(shape, ProcessGrid::new(2, 1, 1, 1).unwrap(), [0; 3]),
            Err(TensorError::BatchIndivisible { n: 3, groups: 2 })
        );
        assert!(matches!(
            make_partition(cube(2, 10), ProcessGrid::new(1, 4, 1, 1).unwrap(), [0; 3]),
            Err(TensorError::NonDivisible { extent: 10, parts: 4 })
        ));
        assert!(matches!(
            make_partition(cube(2, 8), ProcessGrid::new(1, 8, 1, 1).unwrap(), [2, 0, 0]),
            Err(TensorError::HaloTooWide { .. })
        ));
    }

    #[test]
    fn sample_parallel_blocks() {
        let meta = sample_parallel(cube(2, 4), 4);
        let ranges: Vec<_> = (0..4).map(|r| meta.samples(r)).collect();
        assert_eq!(ranges, vec![0..0, 0..1, 1..1, 1..2]);
        assert_eq!(meta.region(3), Region::whole([4, 4, 4]));
    }
}
