use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use super::DataError;

/// Which samples every data-parallel group processes in each iteration of
/// one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochSchedule {
    pub epoch: usize,
    /// Shuffled sample ids.
    pub perm: Vec<usize>,
    /// Mini-batch size `N`.
    pub batch: usize,
    pub groups: usize,
}

impl EpochSchedule {
    /// Full mini-batches; the trailing `S mod N` samples sit out the epoch.
    pub fn iterations(&self) -> usize {
        self.perm.len() / self.batch
    }

    pub fn per_group(&self) -> usize {
        self.batch / self.groups
    }

    /// Samples of `iteration` in mini-batch order.
    pub fn batch_ids(&self, iteration: usize) -> &[usize] {
        &self.perm[iteration * self.batch..(iteration + 1) * self.batch]
    }

    /// Samples that `group` processes in `iteration`.
    pub fn assignment(&self, iteration: usize, group: usize) -> &[usize] {
        let k = self.per_group();
        &self.batch_ids(iteration)[group * k..(group + 1) * k]
    }

    /// Samples dropped from this epoch because they do not fill a batch.
    pub fn trailing(&self) -> &[usize] {
        &self.perm[self.iterations() * self.batch..]
    }
}

/// Seeded shuffle of `0..samples`: `rand`'s Fisher-Yates
/// (`SliceRandom::shuffle`) driven by `ChaCha8Rng::seed_from_u64(seed)` on
/// stream `epoch`.
pub fn epoch_schedule(
    seed: u64,
    epoch: usize,
    samples: usize,
    batch: usize,
    groups: usize,
) -> Result<EpochSchedule, DataError> {
    let bad = |reason: &str| DataError::BadBatch { n: batch, groups, reason: reason.into() };
    if groups == 0 || batch == 0 || !batch.is_multiple_of(groups) {
        return Err(bad("the batch must be a positive multiple of the group count"));
    }
    if batch > samples {
        return Err(bad(&format!("only {samples} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut perm: Vec<usize> = (0..samples).collect();
    perm.shuffle(&mut rng);
    Ok(EpochSchedule { epoch, perm, batch, groups })
}

/// Owning group of every sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnerMap {
    pub owners: Vec<usize>,
}

impl OwnerMap {
    pub fn owner(&self, sample: usize) -> usize {
        self.owners[sample]
    }

    /// Samples owned by `group`, ascending.
    pub fn owned_by(&self, group: usize) -> Vec<usize> {
        (0..self.owners.len()).filter(|&s| self.owners[s] == group).collect()
    }
}

/// Owner of each sample: the group that processed it in epoch 0. Samples
/// that epoch 0 dropped as a partial batch go round-robin to the groups.
pub fn build_owner_map(epoch0: &EpochSchedule) -> OwnerMap {
    let mut owners = vec![usize::MAX; epoch0.perm.len()];
    for it in 0..epoch0.iterations() {
        for g in 0..epoch0.groups {
            for &s in epoch0.assignment(it, g) {
                owners[s] = g;
            }
        }
    }
    for (k, &s) in epoch0.trailing().iter().enumerate() {
        owners[s] = k % epoch0.groups;
    }
    OwnerMap { owners }
}
