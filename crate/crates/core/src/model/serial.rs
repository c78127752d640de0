//! Serial execution of a network on whole tensors with the reference
//! kernels. This is the oracle for the distributed executor.

use super::graph::{LossKind, NetworkSpec, INPUT};
use super::params::ModelState;
use crate::error::{Error, Result};
use crate::layers::reference::{
    conv3d_bwd_data_ref, conv3d_bwd_filter_ref, conv3d_ref, deconv3d_bwd_data_ref, deconv3d_bwd_filter_ref,
    deconv3d_ref, pool3d_bwd_ref, pool3d_ref,
};
use crate::layers::{
    batchnorm_backward, batchnorm_forward, cross_entropy, dropout, fc_backward, fc_forward, leaky_relu,
    leaky_relu_backward, mse, serial_reduce, BnCache, BnMode, DropoutKey, LayerOp,
};
use crate::real::Real;
use crate::tensor::{make_partition, DistTensor, ProcessGrid, Tensor5};

/// Whether a pass trains (batch statistics, dropout) and which dropout
/// masks it draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pass {
    pub train: bool,
    pub key: DropoutKey,
    /// Also compute the gradient with respect to the network input.
    pub input_grad: bool,
}

impl Pass {
    pub fn train(key: DropoutKey) -> Self {
        Pass { train: true, key, input_grad: false }
    }

    pub fn eval() -> Self {
        Pass::default()
    }

    fn bn_mode(&self) -> BnMode {
        if self.train {
            BnMode::Train
        } else {
            BnMode::Eval
        }
    }
}

/// Loss targets for a whole mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    /// `N x K` row-major regression targets.
    Regression(Vec<T>),
    /// Class id per voxel, shaped `N x 1 x D x H x W`.
    Labels(Tensor5<T>),
}

/// Result of a serial forward and backward pass.
#[derive(Debug, Clone)]
pub struct SerialStep<T> {
    pub loss: T,
    /// Batch-mean parameter gradients, laid out like the parameters.
    pub grads: Vec<T>,
    /// Every value of the graph (input first).
    pub values: Vec<Tensor5<T>>,
    /// Gradient of the loss with respect to every value, where computed.
    pub value_grads: Vec<Option<Tensor5<T>>>,
}

enum Cache<T> {
    None,
    Pool(Vec<u8>),
    Bn(BnCache<T>),
    Mask(Vec<T>),
}

fn single<T: Real>(t: &Tensor5<T>) -> Result<DistTensor<T>> {
    let meta = make_partition(t.shape, ProcessGrid::single(), [0; 3])?;
    Ok(DistTensor::new(meta, 0, t.data.clone())?)
}

fn add_into<T: Real>(slot: &mut Option<Tensor5<T>>, g: Tensor5<T>) {
    match slot {
        Some(acc) => acc.data.iter_mut().zip(g.data).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn forward<T: Real>(
    spec: &NetworkSpec,
    state: &mut ModelState<T>,
    x: &Tensor5<T>,
    pass: Pass,
) -> Result<(Vec<Tensor5<T>>, Vec<Cache<T>>)> {
    let shapes = spec.shapes(x.shape.n)?;
    if x.shape != shapes[INPUT] {
        return Err(Error::ShapeMismatch(format!("input {} for a network taking {}", x.shape, shapes[INPUT])));
    }
    let mut values = vec![x.clone()];
    let mut caches = Vec::with_capacity(spec.nodes.len());
    for (i, node) in spec.nodes.iter().enumerate() {
        let ctx = |e: Error| e.in_layer(&node.name);
        let a = &values[node.inputs[0]];
        let params = &state.params;
        let (y, cache) = match &node.op {
            LayerOp::Conv(p) => (conv3d_ref(a, params.tensor(i, 0), p).map_err(ctx)?, Cache::None),
            LayerOp::Deconv(p) => (deconv3d_ref(a, params.tensor(i, 0), p).map_err(ctx)?, Cache::None),
            LayerOp::BatchNorm { channels } => {
                let bn = state.bn[i].as_mut().expect("batch norm state");
                let (y, c) = batchnorm_forward(
                    &a.data,
                    a.shape.n,
                    *channels,
                    params.tensor(i, 0),
                    params.tensor(i, 1),
                    bn,
                    pass.bn_mode(),
                    &mut serial_reduce,
                )
                .map_err(ctx)?;
                (Tensor5::from_vec(a.shape, y)?, Cache::Bn(c))
            }
            LayerOp::LeakyRelu { slope } => {
                (Tensor5::from_vec(a.shape, leaky_relu(&a.data, T::from_f64c(*slope)))?, Cache::None)
            }
            LayerOp::Pool { kind } => {
                let (y, arg) = pool3d_ref(a, *kind).map_err(ctx)?;
                (y, Cache::Pool(arg))
            }
            LayerOp::Concat => {
                let b = &values[node.inputs[1]];
                let out = a.shape.with_c(a.shape.c + b.shape.c);
                let (pa, pb) = (a.shape.sample_len(), b.shape.sample_len());
                let mut data = Vec::with_capacity(out.len());
                for n in 0..out.n {
                    data.extend_from_slice(&a.data[n * pa..(n + 1) * pa]);
                    data.extend_from_slice(&b.data[n * pb..(n + 1) * pb]);
                }
                (Tensor5::from_vec(out, data)?, Cache::None)
            }
            LayerOp::FullyConnected { inputs, outputs } => {
                let y =
                    fc_forward(&a.data, params.tensor(i, 0), params.tensor(i, 1), *inputs, *outputs).map_err(ctx)?;
                (Tensor5::from_vec(shapes[i + 1], y)?, Cache::None)
            }
            LayerOp::Dropout { keep } => {
                let (y, mask) = dropout(&single(a)?, *keep, pass.key, pass.train);
                (Tensor5::from_vec(a.shape, y.into_data())?, Cache::Mask(mask))
            }
        };
        values.push(y);
        caches.push(cache);
    }
    Ok((values, caches))
}

/// Loss and the gradient with respect to the network output.
fn loss<T: Real>(spec: &NetworkSpec, out: &Tensor5<T>, targets: &Targets<T>) -> Result<(T, Tensor5<T>)> {
    match (spec.loss, targets) {
        (LossKind::Mse, Targets::Regression(t)) => {
            let m = mse(&out.data, t)?;
            Ok((m.loss, Tensor5::from_vec(out.shape, m.grad)?))
        }
        (LossKind::CrossEntropy, Targets::Labels(l)) => {
            if l.shape != out.shape.with_c(1) {
                return Err(Error::ShapeMismatch(format!("labels {} for logits {}", l.shape, out.shape)));
            }
            let ce = cross_entropy(&out.data, &l.data, out.shape.n, out.shape.c)?;
            Ok((ce.loss, Tensor5::from_vec(out.shape, ce.grad)?))
        }
        _ => Err(Error::Config(format!("targets do not match the {:?} loss", spec.loss))),
    }
}

/// Loss of a forward pass only.
pub fn serial_loss<T: Real>(
    spec: &NetworkSpec,
    state: &mut ModelState<T>,
    x: &Tensor5<T>,
    targets: &Targets<T>,
    pass: Pass,
) -> Result<T> {
    let (values, _) = forward(spec, state, x, pass)?;
    Ok(loss(spec, values.last().unwrap(), targets)?.0)
}

/// Forward pass, loss and full backward pass.
pub fn serial_forward_backward<T: Real>(
    spec: &NetworkSpec,
    state: &mut ModelState<T>,
    x: &Tensor5<T>,
    targets: &Targets<T>,
    pass: Pass,
) -> Result<SerialStep<T>> {
    let (values, caches) = forward(spec, state, x, pass)?;
    let (loss_value, dout) = loss(spec, values.last().unwrap(), targets)?;
    let params = &state.params;
    let mut grads = vec![T::zero(); params.len()];
    let mut vgrads: Vec<Option<Tensor5<T>>> = vec![None; values.len()];
    *vgrads.last_mut().unwrap() = Some(dout);
    for (i, node) in spec.nodes.iter().enumerate().rev() {
        let Some(dy) = vgrads[i + 1].clone() else { continue };
        let ctx = |e: Error| e.in_layer(&node.name);
        let a = &values[node.inputs[0]];
        let want_dx = pass.input_grad || node.inputs[0] != INPUT;
        let mut set = |k: usize, g: Vec<T>| grads[params.ranges[i][k].clone()].copy_from_slice(&g);
        let dxs: Vec<Tensor5<T>> = match &node.op {
            LayerOp::Conv(p) => {
                set(0, conv3d_bwd_filter_ref(a, &dy, p).map_err(ctx)?);
                if want_dx {
                    vec![conv3d_bwd_data_ref(&dy, params.tensor(i, 0), p, a.shape.spatial()).map_err(ctx)?]
                } else {
                    vec![]
                }
            }
            LayerOp::Deconv(p) => {
                set(0, deconv3d_bwd_filter_ref(a, &dy, p).map_err(ctx)?);
                vec![deconv3d_bwd_data_ref(&dy, params.tensor(i, 0), p).map_err(ctx)?]
            }
            LayerOp::BatchNorm { channels } => {
                let Cache::Bn(c) = &caches[i] else { unreachable!() };
                let (dx, dg, db) =
                    batchnorm_backward(&dy.data, a.shape.n, *channels, params.tensor(i, 0), c, &mut serial_reduce)
                        .map_err(ctx)?;
                set(0, dg);
                set(1, db);
                vec![Tensor5::from_vec(a.shape, dx)?]
            }
            LayerOp::LeakyRelu { slope } => {
                vec![Tensor5::from_vec(a.shape, leaky_relu_backward(&a.data, &dy.data, T::from_f64c(*slope)))?]
            }
            LayerOp::Pool { kind } => {
                let Cache::Pool(arg) = &caches[i] else { unreachable!() };
                vec![pool3d_bwd_ref(&dy, *kind, arg)]
            }
            LayerOp::Concat => {
                let b = &values[node.inputs[1]];
                let (pa, pb) = (a.shape.sample_len(), b.shape.sample_len());
                let (mut ga, mut gb) = (Vec::with_capacity(a.shape.len()), Vec::with_capacity(b.shape.len()));
                for chunk in dy.data.chunks_exact(pa + pb) {
                    ga.extend_from_slice(&chunk[..pa]);
                    gb.extend_from_slice(&chunk[pa..]);
                }
                vec![Tensor5::from_vec(a.shape, ga)?, Tensor5::from_vec(b.shape, gb)?]
            }
            LayerOp::FullyConnected { inputs, outputs } => {
                let (dx, dw, db) =
                    fc_backward(&a.data, &dy.data, params.tensor(i, 0), *inputs, *outputs).map_err(ctx)?;
                set(0, dw);
                set(1, db);
                vec![Tensor5::from_vec(a.shape, dx)?]
            }
            LayerOp::Dropout { .. } => {
                let Cache::Mask(mask) = &caches[i] else { unreachable!() };
                if mask.is_empty() {
                    vec![dy]
                } else {
                    vec![Tensor5::from_vec(a.shape, dy.data.iter().zip(mask).map(|(&g, &m)| g * m).collect())?]
                }
            }
        };
        for (g, &v) in dxs.into_iter().zip(&node.inputs) {
            add_into(&mut vgrads[v], g);
        }
    }
    Ok(SerialStep { loss: loss_value, grads, values, value_grads: vgrads })
}
