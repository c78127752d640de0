//! Epoch loop: data served by the distributed sample cache, Adam with the
//! linear learning-rate decay, and a validation pass after every epoch.

use serde::Serialize;

use crate::datastore::{epoch_schedule, DataStore, EpochIo, IoCounters, Manifest};
use crate::error::{Error, Result};
use crate::fabric::Fabric;
use crate::layers::DropoutKey;
use crate::model::{dist_loss, dist_train_step, lr_at, AdamState, ModelState, NetworkSpec, Pass, INPUT};
use crate::real::Real;
use crate::tensor::ProcessGrid;

/// Shuffle stream of the validation set, kept apart from training.
const VALIDATION_SEED_SALT: u64 = 0x7661_6c69_6461_7465;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Global mini-batch size.
    pub batch: usize,
    pub epochs: usize,
    /// Initial learning rate.
    pub eta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss of the epoch's training steps.
    pub train_loss: f64,
    /// Mean evaluation-mode loss over the validation set.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainRun<T> {
    pub metrics: Vec<EpochMetrics>,
    pub state: ModelState<T>,
    /// File and exchange traffic of the training set per epoch.
    pub io: Vec<EpochIo>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Train `spec` on `grid` for `opts.epochs` epochs over `train`, evaluating
/// on `val` after each epoch. Every sample file is read once, in epoch 0.
pub fn train_epochs<T: Real>(
    fabric: &Fabric,
    spec: &NetworkSpec,
    grid: ProcessGrid,
    state: &ModelState<T>,
    train: &Manifest,
    val: Option<&Manifest>,
    opts: &TrainOptions,
) -> Result<TrainRun<T>> {
    if fabric.size() != grid.ranks() {
        return Err(Error::Config(format!("grid {grid} needs {} ranks, fabric has {}", grid.ranks(), fabric.size())));
    }
    let plan = spec.plan(grid, opts.batch)?;
    let [c, d, h, w] = train.dims;
    if spec.input.with_n(opts.batch) != plan.shapes[INPUT]
        || [spec.input.c, spec.input.d, spec.input.h, spec.input.w] != [c, d, h, w]
    {
        return Err(Error::ShapeMismatch(format!(
            "dataset samples are {:?}, the network takes {}",
            train.dims, spec.input
        )));
    }
    let io = IoCounters::new();
    let val_io = IoCounters::new();
    let val = val.filter(|m| !m.is_empty());
    let epoch0 = epoch_schedule(opts.seed, 0, train.len(), opts.batch, grid.groups)?;
    let val_sched = val
        .map(|m| epoch_schedule(opts.seed ^ VALIDATION_SEED_SALT, 0, m.len(), opts.batch, grid.groups))
        .transpose()?;
    let runs = fabric.run_all(|comm| {
        let mut store = DataStore::new(train, grid, comm.rank())?;
        store.ingest_epoch0(train, &epoch0, &io)?;
        let val_store = match (val, &val_sched) {
            (Some(m), Some(s)) => {
                let mut vs = DataStore::new(m, grid, comm.rank())?;
                vs.ingest_epoch0(m, s, &val_io)?;
                Some(vs)
            }
            _ => None,
        };
        let mut st = state.clone();
        let mut adam = AdamState::new(st.params.len());
        let mut metrics = Vec::with_capacity(opts.epochs);
        for epoch in 0..opts.epochs {
            let sched = if epoch == 0 {
                epoch0.clone()
            } else {
                epoch_schedule(opts.seed, epoch, train.len(), opts.batch, grid.groups)?
            };
            let eta = lr_at(opts.eta, epoch);
            let mut losses = Vec::with_capacity(sched.iterations());
            for it in 0..sched.iterations() {
                let mb = store.next_batch::<T>(comm, train, &sched, it, &io)?;
                let key = DropoutKey { seed: opts.seed, epoch: epoch as u64, iteration: it as u64 };
                let loss =
                    dist_train_step(comm, spec, &plan, &mut st, &mut adam, mb.x, &mb.targets, eta, Pass::train(key))?;
                losses.push(loss.to_f64c());
            }
            let val_loss = match (&val_store, val, &val_sched) {
                (Some(vs), Some(m), Some(s)) => {
                    let mut vl = Vec::with_capacity(s.iterations());
                    for it in 0..s.iterations() {
                        let mb = vs.next_batch::<T>(comm, m, s, it, &val_io)?;
                        vl.push(dist_loss(comm, spec, &plan, &mut st, mb.x, &mb.targets, Pass::eval())?.to_f64c());
                    }
                    Some(mean(&vl))
                }
                _ => None,
            };
            metrics.push(EpochMetrics { epoch, train_loss: mean(&losses), val_loss });
        }
        Ok((metrics, st))
    })?;
    let (metrics, state) = runs.into_iter().next().expect("at least one rank");
    let per_epoch = io.per_epoch();
    let io = (0..opts.epochs).map(|e| per_epoch.get(&e).copied().unwrap_or_default()).collect();
    Ok(TrainRun { metrics, state, io })
}
