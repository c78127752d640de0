//! Distributed-versus-serial comparison, shared by tests and the CLI.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;

use super::driver::{run_forward_backward, Batch};
use super::graph::{LossKind, NetworkSpec};
use super::params::ModelState;
use super::serial::{serial_forward_backward, Pass, Targets};
use crate::error::Result;
use crate::fabric::Fabric;
use crate::real::{max_abs_diff, max_rel_diff, Real};
use crate::tensor::{ProcessGrid, Tensor5};

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Seeded mini-batch: inputs uniform in `[-0.5, 0.5)`, regression targets
/// uniform in `[0, 1)`, labels uniform over `{0, 1}`.
pub fn random_batch<T: Real>(spec: &NetworkSpec, n: usize, seed: u64) -> Result<Batch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor5::from_fn(spec.input.with_n(n), |_, _, _, _, _| T::from_f64c(uniform(&mut rng) - 0.5));
    let out = spec.output_shape(n)?;
    let targets = match spec.loss {
        LossKind::Mse => Targets::Regression((0..out.len()).map(|_| T::from_f64c(uniform(&mut rng))).collect()),
        LossKind::CrossEntropy => {
            Targets::Labels(Tensor5::from_fn(out.with_c(1), |_, _, _, _, _| T::from_f64c((rng.next_u64() % 2) as f64)))
        }
    };
    Ok(Batch { x, targets })
}

/// Deviation of one distributed quantity from the oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    /// Layer (or `input`, or `loss`).
    pub layer: String,
    /// `value`, `value_grad`, `param_grad` or `loss`.
    pub quantity: &'static str,
    pub max_abs: f64,
    pub max_rel: f64,
}

/// One distributed forward and backward pass on `grid` compared against the
/// serial pass in the same precision.
pub fn compare_with_serial<T: Real>(
    fabric: &Fabric,
    spec: &NetworkSpec,
    grid: ProcessGrid,
    state: &ModelState<T>,
    batch: &Batch<T>,
    pass: Pass,
) -> Result<Vec<Deviation>> {
    let serial = serial_forward_backward(spec, &mut state.clone(), &batch.x, &batch.targets, pass)?;
    let dist = run_forward_backward(fabric, spec, grid, state, batch, pass)?;
    let dev = |layer: &str, quantity, a: &[T], b: &[T]| Deviation {
        layer: layer.to_string(),
        quantity,
        max_abs: max_abs_diff(a, b),
        max_rel: max_rel_diff(a, b),
    };
    let mut out = vec![dev("loss", "loss", &[dist.loss], &[serial.loss])];
    for v in 0..serial.values.len() {
        let name = spec.value_name(v);
        out.push(dev(name, "value", &dist.values[v].data, &serial.values[v].data));
        match (&dist.value_grads[v], &serial.value_grads[v]) {
            (Some(a), Some(b)) => out.push(dev(name, "value_grad", &a.data, &b.data)),
            (None, None) => {}
            _ => out.push(Deviation {
                layer: name.into(),
                quantity: "value_grad",
                max_abs: f64::INFINITY,
                max_rel: f64::INFINITY,
            }),
        }
    }
    for (i, node) in spec.nodes.iter().enumerate() {
        let ranges = &state.params.ranges[i];
        if let (Some(first), Some(last)) = (ranges.first(), ranges.last()) {
            let r = first.start..last.end;
            out.push(dev(&node.name, "param_grad", &dist.grads[r.clone()], &serial.grads[r]));
        }
    }
    Ok(out)
}
