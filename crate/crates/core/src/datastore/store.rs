use std::collections::BTreeMap;

use super::counters::IoCounters;
use super::format::{decode_voxels, read_hyperslab, Dtype};
use super::manifest::Manifest;
use super::schedule::{build_owner_map, EpochSchedule, OwnerMap};
use super::DataError;
use crate::error::Result;
use crate::fabric::{tags, Comm, TrafficClass};
use crate::model::DistTargets;
use crate::real::Real;
use crate::tensor::{make_partition, DistTensor, DistTensorMeta, GridCoord, ProcessGrid, Region, Shape5D};

#[derive(Debug, Clone, PartialEq)]
struct Cached {
    voxels: Vec<u8>,
    label: Option<Vec<u8>>,
}

/// One rank's share of the sample cache: the hyperslab of its spatial region
/// for every sample its group owns.
#[derive(Debug, Clone)]
pub struct DataStore {
    grid: ProcessGrid,
    rank: usize,
    region: Region,
    dims: [usize; 4],
    dtype: Dtype,
    cache: BTreeMap<usize, Cached>,
    owners: Option<OwnerMap>,
}

/// Hyperslabs delivered to one rank for one iteration, in the order of its
/// group's assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivered {
    pub ids: Vec<usize>,
    pub voxels: Vec<Vec<u8>>,
    pub labels: Option<Vec<Vec<u8>>>,
}

/// A materialized mini-batch on one rank.
#[derive(Debug, Clone)]
pub struct MiniBatch<T> {
    /// Sample ids of the whole mini-batch in batch order.
    pub ids: Vec<usize>,
    pub x: DistTensor<T>,
    pub targets: DistTargets<T>,
}

impl DataStore {
    /// An empty cache for `rank` of `grid` holding samples shaped as in
    /// `manifest`.
    pub fn new(manifest: &Manifest, grid: ProcessGrid, rank: usize) -> Result<Self> {
        let meta = Self::layout(manifest, grid, grid.groups)?;
        Ok(DataStore {
            grid,
            rank,
            region: meta.region(rank),
            dims: manifest.dims,
            dtype: manifest.dtype,
            cache: BTreeMap::new(),
            owners: None,
        })
    }

    /// Input layout of a mini-batch of `n` samples.
    pub fn layout(manifest: &Manifest, grid: ProcessGrid, n: usize) -> Result<DistTensorMeta> {
        let [c, d, h, w] = manifest.dims;
        Ok(make_partition(Shape5D::new(n, c, d, h, w)?, grid, [0; 3])?)
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn cached_ids(&self) -> Vec<usize> {
        self.cache.keys().copied().collect()
    }

    pub fn owners(&self) -> Option<&OwnerMap> {
        self.owners.as_ref()
    }

    fn coord(&self) -> GridCoord {
        self.grid.coord(self.rank)
    }

    /// Rank with this rank's spatial coordinates in `group`.
    fn peer(&self, group: usize) -> usize {
        self.grid.rank_of(GridCoord { group, ..self.coord() })
    }

    /// Read this rank's hyperslab of every sample its group processes in
    /// epoch 0 (plus its share of the samples epoch 0 leaves out) and record
    /// ownership.
    pub fn ingest_epoch0(&mut self, manifest: &Manifest, epoch0: &EpochSchedule, io: &IoCounters) -> Result<()> {
        if !self.cache.is_empty() || self.owners.is_some() {
            return Err(DataError::CacheNotEmpty.into());
        }
        if epoch0.groups != self.grid.groups {
            return Err(DataError::GridChanged { cached: self.grid.groups, requested: epoch0.groups }.into());
        }
        let owners = build_owner_map(epoch0);
        let group = self.coord().group;
        let mine = (0..epoch0.iterations())
            .flat_map(|it| epoch0.assignment(it, group).iter().copied())
            .chain(epoch0.trailing().iter().copied().filter(|&s| owners.owner(s) == group));
        for s in mine {
            let (header, voxels) = read_hyperslab(&manifest.sample_path(s), &self.region, io, epoch0.epoch)?;
            if header.dims != self.dims || header.dtype != self.dtype {
                return Err(DataError::Manifest(format!(
                    "sample {s} is {:?} {:?}, manifest says {:?} {:?}",
                    header.dtype, header.dims, self.dtype, self.dims
                ))
                .into());
            }
            let label = match manifest.label_path(s) {
                Some(p) => {
                    let (lh, l) = read_hyperslab(&p, &self.region, io, epoch0.epoch)?;
                    let [_, d, h, w] = self.dims;
                    if lh.dims != [1, d, h, w] || lh.dtype != Dtype::Int16 {
                        return Err(
                            DataError::Manifest(format!("label of sample {s} must be int16 1x{d}x{h}x{w}")).into()
                        );
                    }
                    Some(l)
                }
                None => None,
            };
            self.cache.insert(s, Cached { voxels, label });
        }
        self.owners = Some(owners);
        Ok(())
    }

    /// Collective: deliver to every rank the hyperslabs of its group's
    /// samples for `iteration`, shipped from the rank with the same spatial
    /// coordinates in the owning group. Reads no files.
    pub fn exchange_for_iteration(
        &self,
        comm: &Comm,
        schedule: &EpochSchedule,
        iteration: usize,
        io: &IoCounters,
    ) -> Result<Delivered> {
        if schedule.groups != self.grid.groups {
            return Err(DataError::GridChanged { cached: self.grid.groups, requested: schedule.groups }.into());
        }
        let owners = self.owners.as_ref().ok_or(DataError::MissingSample(schedule.batch_ids(iteration)[0]))?;
        let group = self.coord().group;
        let lookup = |s: usize| self.cache.get(&s).ok_or(DataError::MissingSample(s));
        for g in (0..self.grid.groups).filter(|&g| g != group) {
            for &s in schedule.assignment(iteration, g).iter().filter(|&&s| owners.owner(s) == group) {
                let c = lookup(s)?;
                let mut payload = c.voxels.clone();
                payload.extend_from_slice(c.label.as_deref().unwrap_or_default());
                io.record_exchange(schedule.epoch, payload.len() as u64);
                comm.send_class(self.peer(g), tags::DATA_EXCHANGE, payload, TrafficClass::DataExchange)?;
            }
        }
        let ids = schedule.assignment(iteration, group).to_vec();
        let mut voxels = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        let vox_len = self.dims[0] * self.region.voxels() * self.dtype.bytes();
        for &s in &ids {
            let owner = owners.owner(s);
            let (v, l) = if owner == group {
                let c = lookup(s)?;
                (c.voxels.clone(), c.label.clone())
            } else {
                let mut payload = comm.recv_class(self.peer(owner), tags::DATA_EXCHANGE)?;
                let label = (payload.len() > vox_len).then(|| payload.split_off(vox_len));
                (payload, label)
            };
            voxels.push(v);
            labels.push(l);
        }
        let labels = labels.into_iter().collect::<Option<Vec<_>>>();
        Ok(Delivered { ids, voxels, labels })
    }

    /// Turn delivered hyperslabs into this rank's block of the mini-batch
    /// input (int16 widened here) and the loss targets.
    pub fn materialize<T: Real>(
        &self,
        manifest: &Manifest,
        schedule: &EpochSchedule,
        iteration: usize,
        delivered: Delivered,
    ) -> Result<MiniBatch<T>> {
        let meta = Self::layout(manifest, self.grid, schedule.batch)?;
        let data: Vec<T> = delivered.voxels.iter().flat_map(|v| decode_voxels::<T>(self.dtype, v)).collect();
        let x = DistTensor::new(meta.clone(), self.rank, data)?;
        let ids = schedule.batch_ids(iteration).to_vec();
        let targets = match delivered.labels {
            Some(labels) => {
                let data = labels.iter().flat_map(|l| decode_voxels::<T>(Dtype::Int16, l)).collect();
                DistTargets::Labels(DistTensor::new(meta.with_channels(1), self.rank, data)?)
            }
            None => DistTargets::Regression(
                ids.iter()
                    .flat_map(|&s| manifest.samples[s].target.iter().flatten().map(|&t| T::from_f64c(t)))
                    .collect(),
            ),
        };
        Ok(MiniBatch { ids, x, targets })
    }

    /// Exchange and materialize in one call.
    pub fn next_batch<T: Real>(
        &self,
        comm: &Comm,
        manifest: &Manifest,
        schedule: &EpochSchedule,
        iteration: usize,
        io: &IoCounters,
    ) -> Result<MiniBatch<T>> {
        let d = self.exchange_for_iteration(comm, schedule, iteration, io)?;
        self.materialize(manifest, schedule, iteration, d)
    }
}
