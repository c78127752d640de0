//! Whole-run helpers: scatter a global mini-batch over a fabric, run every
//! rank and gather the results.

use super::dist::{dist_forward_backward, dist_train_step, DistTargets};
use super::graph::{NetworkSpec, Plan, INPUT};
use super::optim::{adam_step, AdamState};
use super::params::ModelState;
use super::serial::{serial_forward_backward, Pass, Targets};
use crate::error::{Error, Result};
use crate::fabric::{Fabric, TrafficCounters};
use crate::layers::DropoutKey;
use crate::real::Real;
use crate::tensor::{DistTensor, ProcessGrid, Tensor5};

/// Gathered result of one distributed forward and backward pass.
#[derive(Debug, Clone)]
pub struct GatheredStep<T> {
    pub loss: T,
    pub grads: Vec<T>,
    pub values: Vec<Tensor5<T>>,
    pub value_grads: Vec<Option<Tensor5<T>>>,
    pub plan: Plan,
    /// Traffic of this pass alone.
    pub traffic: TrafficCounters,
}

/// A global mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub x: Tensor5<T>,
    pub targets: Targets<T>,
}

/// This rank's view of global targets: regression rows stay whole, label
/// volumes are split like the network input.
pub fn scatter_targets<T: Real>(targets: &Targets<T>, plan: &Plan, rank: usize) -> Result<DistTargets<T>> {
    Ok(match targets {
        Targets::Regression(v) => DistTargets::Regression(v.clone()),
        Targets::Labels(l) => DistTargets::Labels(DistTensor::scatter(l, &plan.values[INPUT].with_channels(1), rank)?),
    })
}

fn check_fabric(fabric: &Fabric, grid: ProcessGrid) -> Result<()> {
    if fabric.size() != grid.ranks() {
        return Err(Error::Config(format!("grid {grid} needs {} ranks, fabric has {}", grid.ranks(), fabric.size())));
    }
    Ok(())
}

fn same_on_all_ranks<T: Real>(what: &str, mut per_rank: impl Iterator<Item = Vec<T>>) -> Result<Vec<T>> {
    let first = per_rank.next().expect("at least one rank");
    let bits = |v: &[T]| v.iter().map(|x| x.to_f64c().to_bits()).collect::<Vec<_>>();
    let reference = bits(&first);
    if per_rank.any(|v| bits(&v) != reference) {
        return Err(Error::Config(format!("ranks disagree on the {what}")));
    }
    Ok(first)
}

/// Run one forward and backward pass of `x` on `grid` and gather every value
/// and value gradient.
pub fn run_forward_backward<T: Real>(
    fabric: &Fabric,
    spec: &NetworkSpec,
    grid: ProcessGrid,
    state: &ModelState<T>,
    batch: &Batch<T>,
    pass: Pass,
) -> Result<GatheredStep<T>> {
    check_fabric(fabric, grid)?;
    let plan = spec.plan(grid, batch.x.shape.n)?;
    let before = fabric.counters();
    let steps = fabric.run_all(|comm| {
        let mut st = state.clone();
        let x = DistTensor::scatter(&batch.x, &plan.values[INPUT], comm.rank())?;
        let t = scatter_targets(&batch.targets, &plan, comm.rank())?;
        dist_forward_backward(comm, spec, &plan, &mut st, x, &t, pass)
    })?;
    let traffic = fabric.counters().since(&before);
    let loss = same_on_all_ranks("loss", steps.iter().map(|s| vec![s.loss]))?[0];
    let grads = same_on_all_ranks("gradients", steps.iter().map(|s| s.grads.clone()))?;
    let count = steps[0].values.len();
    let mut vals: Vec<_> = steps.iter().map(|s| s.values.iter()).collect();
    let mut grs: Vec<_> = steps.iter().map(|s| s.value_grads.iter()).collect();
    let mut values = Vec::with_capacity(count);
    let mut value_grads = Vec::with_capacity(count);
    for _ in 0..count {
        let parts: Vec<_> = vals.iter_mut().map(|it| it.next().unwrap().clone()).collect();
        values.push(DistTensor::gather(&parts)?);
        let parts: Vec<_> = grs.iter_mut().map(|it| it.next().unwrap().clone()).collect();
        let parts: Option<Vec<_>> = parts.into_iter().collect();
        value_grads.push(parts.map(|p| DistTensor::gather(&p)).transpose()?);
    }
    Ok(GatheredStep { loss, grads, values, value_grads, plan, traffic })
}

/// Dropout key of training step `step`.
pub fn step_key(seed: u64, step: usize) -> DropoutKey {
    DropoutKey { seed, epoch: 0, iteration: step as u64 }
}

/// Train on `batches` in order with Adam on `grid`. Returns the loss of every
/// step and the final state, which every rank must agree on.
pub fn train_distributed<T: Real>(
    fabric: &Fabric,
    spec: &NetworkSpec,
    grid: ProcessGrid,
    state: &ModelState<T>,
    batches: &[Batch<T>],
    eta: f64,
    seed: u64,
) -> Result<(Vec<T>, ModelState<T>)> {
    check_fabric(fabric, grid)?;
    let n = batches.first().map_or(grid.groups, |b| b.x.shape.n);
    let plan = spec.plan(grid, n)?;
    let runs = fabric.run_all(|comm| {
        let mut st = state.clone();
        let mut adam = AdamState::new(st.params.len());
        let mut losses = Vec::with_capacity(batches.len());
        for (k, b) in batches.iter().enumerate() {
            let x = DistTensor::scatter(&b.x, &plan.values[INPUT], comm.rank())?;
            let t = scatter_targets(&b.targets, &plan, comm.rank())?;
            losses.push(dist_train_step(
                comm,
                spec,
                &plan,
                &mut st,
                &mut adam,
                x,
                &t,
                eta,
                Pass::train(step_key(seed, k)),
            )?);
        }
        Ok((losses, st))
    })?;
    let losses = same_on_all_ranks("losses", runs.iter().map(|r| r.0.clone()))?;
    same_on_all_ranks("weights", runs.iter().map(|r| r.1.params.values.clone()))?;
    let state = runs.into_iter().next().unwrap().1;
    Ok((losses, state))
}

/// Serial counterpart of [`train_distributed`].
pub fn train_serial<T: Real>(
    spec: &NetworkSpec,
    state: &ModelState<T>,
    batches: &[Batch<T>],
    eta: f64,
    seed: u64,
) -> Result<(Vec<T>, ModelState<T>)> {
    let mut st = state.clone();
    let mut adam = AdamState::new(st.params.len());
    let mut losses = Vec::with_capacity(batches.len());
    for (k, b) in batches.iter().enumerate() {
        let step = serial_forward_backward(spec, &mut st, &b.x, &b.targets, Pass::train(step_key(seed, k)))?;
        adam_step(&mut st.params.values, &step.grads, &mut adam, eta)?;
        losses.push(step.loss);
    }
    Ok((losses, st))
}
