//! Distributed execution of a network on one rank of a process grid.

use super::graph::{LossKind, NetworkSpec, Plan, INPUT};
use super::optim::{adam_step, AdamState};
use super::params::ModelState;
use super::serial::Pass;
use crate::error::{Error, Result};
use crate::fabric::Comm;
use crate::layers::reference::deconv_as_conv;
use crate::layers::{
    concat_channels, conv3d_bwd_filter_local, conv3d_from_block, conv_output_meta, deconv3d_bwd_data_from_block,
    deconv3d_bwd_filter_local, deconv3d_from_block, deconv_output_meta, dist_batchnorm_backward,
    dist_batchnorm_forward, dist_cross_entropy, dist_mse, dist_pool3d, dist_pool3d_backward, dropout, fc_backward,
    fc_forward, halo_block, kernels::conv_backward_data, leaky_relu, leaky_relu_backward, redistribute, split_channels,
    BnCache, BnMode, LayerOp, PoolCache,
};
use crate::real::Real;
use crate::tensor::{Block, DistTensor};

/// Loss targets as seen by one rank.
#[derive(Debug, Clone, PartialEq)]
pub enum DistTargets<T> {
    /// The whole `N x K` regression matrix; each rank uses its own rows.
    Regression(Vec<T>),
    /// Class ids in any layout of the `N x 1 x D x H x W` label volume.
    Labels(DistTensor<T>),
}

/// This rank's result of a forward and backward pass.
#[derive(Debug, Clone)]
pub struct DistStep<T> {
    /// Loss over the whole mini-batch, identical on every rank.
    pub loss: T,
    /// Batch-mean parameter gradients summed over every rank.
    pub grads: Vec<T>,
    /// This rank's block of every value, in the layout it was produced.
    pub values: Vec<DistTensor<T>>,
    /// This rank's block of every value gradient, where computed.
    pub value_grads: Vec<Option<DistTensor<T>>>,
}

enum Cache<T> {
    None,
    Block(Block<T>),
    Bn(BnCache<T>),
    Pool(PoolCache),
    Mask(Vec<T>),
}

struct Forward<T> {
    values: Vec<DistTensor<T>>,
    /// Per node, inputs that had to be redistributed before use.
    moved: Vec<Vec<Option<DistTensor<T>>>>,
    caches: Vec<Cache<T>>,
}

impl<T: Real> Forward<T> {
    fn input(&self, spec: &NetworkSpec, i: usize, j: usize) -> &DistTensor<T> {
        self.moved[i][j].as_ref().unwrap_or(&self.values[spec.nodes[i].inputs[j]])
    }
}

fn check_plan<T>(spec: &NetworkSpec, plan: &Plan, x: &DistTensor<T>) -> Result<()> {
    if plan.values.len() != spec.nodes.len() + 1 {
        return Err(Error::Config("plan does not belong to this network".into()));
    }
    if x.meta() != &plan.values[INPUT] {
        return Err(Error::ShapeMismatch("input is not laid out as the plan expects".into()));
    }
    Ok(())
}

fn forward<T: Real>(
    comm: &Comm,
    spec: &NetworkSpec,
    plan: &Plan,
    state: &mut ModelState<T>,
    x: DistTensor<T>,
    pass: Pass,
) -> Result<Forward<T>> {
    check_plan(spec, plan, &x)?;
    let rank = comm.rank();
    let mode = if pass.train { BnMode::Train } else { BnMode::Eval };
    let mut f = Forward { values: vec![x], moved: Vec::new(), caches: Vec::new() };
    for (i, node) in spec.nodes.iter().enumerate() {
        let ctx = |e: Error| e.in_layer(&node.name);
        let mut moved = Vec::with_capacity(node.inputs.len());
        for &v in &node.inputs {
            let want = plan.input_layout(i, v);
            let have = &f.values[v];
            moved.push(if have.meta() == &want { None } else { Some(redistribute(comm, have, &want).map_err(ctx)?) });
        }
        f.moved.push(moved);
        let a = f.input(spec, i, 0);
        let out_meta = &plan.values[i + 1];
        let params = &state.params;
        let (y, cache) = match &node.op {
            LayerOp::Conv(p) => {
                debug_assert_eq!(&conv_output_meta(a.meta(), p).map_err(ctx)?, out_meta);
                let xb = halo_block(comm, a, p.forward_halo()).map_err(ctx)?;
                let y = conv3d_from_block(&xb, out_meta, rank, params.tensor(i, 0), p).map_err(ctx)?;
                (y, Cache::Block(xb))
            }
            LayerOp::Deconv(p) => {
                debug_assert_eq!(&deconv_output_meta(a.meta(), p).map_err(ctx)?, out_meta);
                let xb = halo_block(comm, a, deconv_as_conv(p).backward_halo()).map_err(ctx)?;
                (deconv3d_from_block(&xb, out_meta, rank, params.tensor(i, 0), p).map_err(ctx)?, Cache::None)
            }
            LayerOp::BatchNorm { .. } => {
                let bn = state.bn[i].as_mut().expect("batch norm state");
                let (y, c) =
                    dist_batchnorm_forward(comm, a, params.tensor(i, 0), params.tensor(i, 1), bn, mode).map_err(ctx)?;
                (y, Cache::Bn(c))
            }
            LayerOp::LeakyRelu { slope } => (a.with_data(leaky_relu(&a.data, T::from_f64c(*slope))), Cache::None),
            LayerOp::Pool { kind } => {
                let (y, c) = dist_pool3d(a, *kind).map_err(ctx)?;
                (y, Cache::Pool(c))
            }
            LayerOp::Concat => (concat_channels(a, f.input(spec, i, 1)).map_err(ctx)?, Cache::None),
            LayerOp::FullyConnected { inputs, outputs } => {
                let y =
                    fc_forward(&a.data, params.tensor(i, 0), params.tensor(i, 1), *inputs, *outputs).map_err(ctx)?;
                (DistTensor::new(out_meta.clone(), rank, y)?, Cache::None)
            }
            LayerOp::Dropout { keep } => {
                let (y, mask) = dropout(a, *keep, pass.key, pass.train);
                (y, Cache::Mask(mask))
            }
        };
        f.values.push(y);
        f.caches.push(cache);
    }
    Ok(f)
}

/// Loss and output gradient; the loss is replicated on every rank.
fn loss<T: Real>(
    comm: &Comm,
    spec: &NetworkSpec,
    out: &DistTensor<T>,
    targets: &DistTargets<T>,
) -> Result<(T, DistTensor<T>)> {
    match (spec.loss, targets) {
        (LossKind::Mse, DistTargets::Regression(t)) => {
            let k = out.meta().global().sample_len();
            if t.len() != out.meta().global().len() {
                return Err(Error::ShapeMismatch(format!("{} targets for output {}", t.len(), out.meta().global())));
            }
            let rows = out.meta().samples(comm.rank());
            let m = dist_mse(comm, out, &t[rows.start * k..rows.end * k])?;
            Ok((m.loss, out.with_data(m.grad)))
        }
        (LossKind::CrossEntropy, DistTargets::Labels(l)) => {
            let want = out.meta().with_channels(1);
            let moved;
            let labels = if l.meta() == &want {
                l
            } else {
                moved = redistribute(comm, l, &want)?;
                &moved
            };
            let ce = dist_cross_entropy(comm, out, labels)?;
            Ok((ce.loss, out.with_data(ce.grad)))
        }
        _ => Err(Error::Config(format!("targets do not match the {:?} loss", spec.loss))),
    }
}

fn add_into<T: Real>(slot: &mut Option<DistTensor<T>>, g: DistTensor<T>) {
    match slot {
        Some(acc) => acc.data.iter_mut().zip(g.data).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Loss of a forward pass only.
pub fn dist_loss<T: Real>(
    comm: &Comm,
    spec: &NetworkSpec,
    plan: &Plan,
    state: &mut ModelState<T>,
    x: DistTensor<T>,
    targets: &DistTargets<T>,
    pass: Pass,
) -> Result<T> {
    let f = forward(comm, spec, plan, state, x, pass)?;
    Ok(loss(comm, spec, f.values.last().unwrap(), targets)?.0)
}

/// Forward pass, loss, backward pass and one allreduce of all parameter
/// gradients over every rank.
pub fn dist_forward_backward<T: Real>(
    comm: &Comm,
    spec: &NetworkSpec,
    plan: &Plan,
    state: &mut ModelState<T>,
    x: DistTensor<T>,
    targets: &DistTargets<T>,
    pass: Pass,
) -> Result<DistStep<T>> {
    let f = forward(comm, spec, plan, state, x, pass)?;
    let (loss_value, dout) = loss(comm, spec, f.values.last().unwrap(), targets)?;
    let rank = comm.rank();
    let params = &state.params;
    let mut grads = vec![T::zero(); params.len()];
    let mut vgrads: Vec<Option<DistTensor<T>>> = vec![None; f.values.len()];
    *vgrads.last_mut().unwrap() = Some(dout);
    for (i, node) in spec.nodes.iter().enumerate().rev() {
        let Some(dy) = vgrads[i + 1].clone() else { continue };
        let ctx = |e: Error| e.in_layer(&node.name);
        let a = f.input(spec, i, 0);
        let want_dx = pass.input_grad || node.inputs[0] != INPUT;
        let mut add = |k: usize, g: Vec<T>| {
            grads[params.ranges[i][k].clone()].iter_mut().zip(g).for_each(|(d, s)| *d += s);
        };
        let dxs: Vec<DistTensor<T>> = match &node.op {
            LayerOp::Conv(p) => {
                let Cache::Block(xb) = &f.caches[i] else { unreachable!() };
                add(0, conv3d_bwd_filter_local(xb, &dy, p));
                if want_dx {
                    let dyb = halo_block(comm, &dy, p.backward_halo()).map_err(ctx)?;
                    let dx = conv_backward_data(&dyb, params.tensor(i, 0), p, a.region());
                    vec![DistTensor::new(a.meta().clone(), rank, dx)?]
                } else {
                    vec![]
                }
            }
            LayerOp::Deconv(p) => {
                let dyb = halo_block(comm, &dy, deconv_as_conv(p).forward_halo()).map_err(ctx)?;
                add(0, deconv3d_bwd_filter_local(&dyb, a, p));
                vec![deconv3d_bwd_data_from_block(&dyb, a.meta(), rank, params.tensor(i, 0), p).map_err(ctx)?]
            }
            LayerOp::BatchNorm { .. } => {
                let Cache::Bn(c) = &f.caches[i] else { unreachable!() };
                let (dx, dg, db) = dist_batchnorm_backward(comm, &dy, params.tensor(i, 0), c).map_err(ctx)?;
                add(0, dg);
                add(1, db);
                vec![dx]
            }
            LayerOp::LeakyRelu { slope } => {
                vec![a.with_data(leaky_relu_backward(&a.data, &dy.data, T::from_f64c(*slope)))]
            }
            LayerOp::Pool { .. } => {
                let Cache::Pool(c) = &f.caches[i] else { unreachable!() };
                vec![dist_pool3d_backward(&dy, c).map_err(ctx)?]
            }
            LayerOp::Concat => {
                let (ga, gb) = split_channels(&dy, a.local_shape().c).map_err(ctx)?;
                vec![ga, gb]
            }
            LayerOp::FullyConnected { inputs, outputs } => {
                let (dx, dw, db) =
                    fc_backward(&a.data, &dy.data, params.tensor(i, 0), *inputs, *outputs).map_err(ctx)?;
                add(0, dw);
                add(1, db);
                vec![a.with_data(dx)]
            }
            LayerOp::Dropout { .. } => {
                let Cache::Mask(mask) = &f.caches[i] else { unreachable!() };
                if mask.is_empty() {
                    vec![dy]
                } else {
                    vec![dy.with_data(dy.data.iter().zip(mask).map(|(&g, &m)| g * m).collect())]
                }
            }
        };
        for (g, &v) in dxs.into_iter().zip(&node.inputs) {
            let home = f.values[v].meta();
            let g = if g.meta() == home { g } else { redistribute(comm, &g, home).map_err(ctx)? };
            add_into(&mut vgrads[v], g);
        }
    }
    comm.allreduce_sum(&mut grads, &comm.world())?;
    Ok(DistStep { loss: loss_value, grads, values: f.values, value_grads: vgrads })
}

/// One training iteration: forward, backward, gradient allreduce and an
/// Adam update. Returns the mini-batch loss.
#[allow(clippy::too_many_arguments)]
pub fn dist_train_step<T: Real>(
    comm: &Comm,
    spec: &NetworkSpec,
    plan: &Plan,
    state: &mut ModelState<T>,
    adam: &mut AdamState<T>,
    x: DistTensor<T>,
    targets: &DistTargets<T>,
    eta: f64,
    pass: Pass,
) -> Result<T> {
    let step = dist_forward_backward(comm, spec, plan, state, x, targets, pass)?;
    adam_step(&mut state.params.values, &step.grads, adam, eta)?;
    Ok(step.loss)
}
