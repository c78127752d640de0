use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::graph::NetworkSpec;
use crate::layers::{BnState, LayerOp};
use crate::real::Real;

/// Every trainable parameter of a network in one flat vector, so that a
/// single allreduce covers all gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub values: Vec<T>,
    /// Per node, the ranges of its parameter tensors in `values`.
    pub ranges: Vec<Vec<Range<usize>>>,
}

fn layout(spec: &NetworkSpec) -> (Vec<Vec<Range<usize>>>, usize) {
    let mut at = 0;
    let ranges = spec
        .param_lens()
        .into_iter()
        .map(|lens| {
            lens.into_iter()
                .map(|l| {
                    at += l;
                    at - l..at
                })
                .collect()
        })
        .collect();
    (ranges, at)
}

impl<T: Real> ParamSet<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let (ranges, len) = layout(spec);
        ParamSet { values: vec![T::zero(); len], ranges }
    }

    /// Seeded initialization: weights uniform in `+-sqrt(6 / fan_in)`, fc
    /// biases zero, batch-norm scale one and shift zero. Each tensor draws
    /// from its own ChaCha8 stream, so values do not depend on `T`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut p = Self::zeros(spec);
        for (i, node) in spec.nodes.iter().enumerate() {
            let fan_in = match &node.op {
                LayerOp::Conv(c) | LayerOp::Deconv(c) => c.in_channels * c.kernel_volume(),
                LayerOp::FullyConnected { inputs, .. } => *inputs,
                LayerOp::BatchNorm { .. } => {
                    p.values[p.ranges[i][0].clone()].iter_mut().for_each(|v| *v = T::one());
                    continue;
                }
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for v in &mut p.values[p.ranges[i][0].clone()] {
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                *v = T::from_f64c((2.0 * u - 1.0) * bound);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Parameter tensor `k` of node `i`.
    pub fn tensor(&self, i: usize, k: usize) -> &[T] {
        &self.values[self.ranges[i][k].clone()]
    }

    pub fn tensor_mut(&mut self, i: usize, k: usize) -> &mut [T] {
        let r = self.ranges[i][k].clone();
        &mut self.values[r]
    }

    /// Convert element type (for comparing fp32 and fp64 runs).
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            values: self.values.iter().map(|v| U::from_f64c(v.to_f64c())).collect(),
            ranges: self.ranges.clone(),
        }
    }
}

/// Parameters plus non-trainable batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub params: ParamSet<T>,
    /// Running statistics per node (`None` for nodes without batch norm).
    pub bn: Vec<Option<BnState<T>>>,
}

impl<T: Real> ModelState<T> {
    pub fn new(spec: &NetworkSpec, seed: u64) -> Self {
        let bn = spec
            .nodes
            .iter()
            .map(|n| match n.op {
                LayerOp::BatchNorm { channels } => Some(BnState::new(channels)),
                _ => None,
            })
            .collect();
        ModelState { params: ParamSet::init(spec, seed), bn }
    }

    /// Convert element type (for comparing fp32 and fp64 runs).
    pub fn cast<U: Real>(&self) -> ModelState<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64c(x.to_f64c())).collect();
        ModelState {
            params: self.params.cast(),
            bn: self
                .bn
                .iter()
                .map(|b| {
                    b.as_ref()
                        .map(|b| BnState { running_mean: conv(&b.running_mean), running_var: conv(&b.running_var) })
                })
                .collect(),
        }
    }
}
