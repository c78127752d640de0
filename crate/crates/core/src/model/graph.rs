use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{flop_count, LayerOp, Phase};
use crate::tensor::{make_partition, sample_parallel, DistTensorMeta, ProcessGrid, Shape5D, TensorError};

/// Value id of the network input. Node `i` produces value `i + 1`.
pub const INPUT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error against a per-sample target vector.
    Mse,
    /// Per-voxel softmax cross-entropy against a label volume.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: LayerOp,
    /// Value ids consumed by this node.
    pub inputs: Vec<usize>,
}

/// A layer graph in topological order. The last node feeds the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Shape of one input sample (`n = 1`).
    pub input: Shape5D,
    pub nodes: Vec<Node>,
    pub loss: LossKind,
    /// Index of the first node to run sample-parallel, overriding the
    /// automatic choice. May only move the point earlier.
    pub redistribute_at: Option<usize>,
}

/// Placement of every value of a network on a process grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Index of the first node executed sample-parallel (`nodes.len()` if
    /// none).
    pub redistribution_point: usize,
    pub shapes: Vec<Shape5D>,
    /// Layout of each value as produced.
    pub values: Vec<DistTensorMeta>,
    ranks: usize,
}

impl NetworkSpec {
    /// Shapes of every value for a mini-batch of `n` samples.
    pub fn shapes(&self, n: usize) -> Result<Vec<Shape5D>> {
        let mut shapes = vec![self.input.with_n(n)];
        for (i, node) in self.nodes.iter().enumerate() {
            let ins = node
                .inputs
                .iter()
                .map(|&v| {
                    if v > i {
                        Err(Error::Config(format!("node `{}` reads value {v} before it exists", node.name)))
                    } else {
                        Ok(shapes[v])
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let out = node.op.output_shape(&ins).map_err(|e| e.in_layer(&node.name))?;
            shapes.push(out);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, n: usize) -> Result<Shape5D> {
        Ok(*self.shapes(n)?.last().unwrap())
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Name of value `v` (`input` or the producing node).
    pub fn value_name(&self, v: usize) -> &str {
        if v == INPUT {
            "input"
        } else {
            &self.nodes[v - 1].name
        }
    }

    /// Parameter tensor lengths per node.
    pub fn param_lens(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.op.param_lens()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.op.param_count()).sum()
    }

    /// Convolution flops per sample for one pass.
    pub fn conv_flops(&self, phase: Phase) -> Result<f64> {
        let shapes = self.shapes(1)?;
        Ok(self
            .nodes
            .iter()
            .filter(|n| matches!(n.op, LayerOp::Conv(_) | LayerOp::Deconv(_)))
            .map(|n| {
                let ins: Vec<_> = n.inputs.iter().map(|&v| shapes[v]).collect();
                flop_count(&n.op, &ins, phase)
            })
            .sum())
    }

    /// Forward plus both backward passes of every convolution, per sample.
    pub fn conv_flops_total(&self) -> Result<f64> {
        Phase::ALL.iter().map(|&p| self.conv_flops(p)).sum()
    }

    /// Bytes per sample of fp32 activations and their gradients: the input
    /// and the output of every layer except dropout, twice.
    pub fn memory_per_sample(&self) -> Result<f64> {
        let shapes = self.shapes(1)?;
        let mut elems = shapes[INPUT].len();
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, LayerOp::Dropout { .. }) {
                elems += shapes[i + 1].len();
            }
        }
        Ok((elems * 4 * 2) as f64)
    }

    /// Decide where each value lives on `grid` for a mini-batch of `n`.
    ///
    /// Nodes run spatially partitioned until the first one that cannot: its
    /// output would not divide over the grid, a stride or pooling window
    /// would straddle ranks, a halo would exceed the local extent, or it is
    /// fully connected. From there on every node runs sample-parallel.
    pub fn plan(&self, grid: ProcessGrid, n: usize) -> Result<Plan> {
        let shapes = self.shapes(n)?;
        let ranks = grid.ranks();
        let spatial_meta = |s: Shape5D| make_partition(s, grid, [0; 3]);
        let input = spatial_meta(shapes[INPUT]).map_err(|e| Error::from(e).in_layer("input"))?;
        let mut point = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            let feasible = node.inputs.iter().all(|&v| node.op.spatially_feasible(shapes[v].spatial(), grid.parts()))
                && node.inputs.iter().all(|&v| spatial_meta(shapes[v]).is_ok())
                && spatial_meta(shapes[i + 1]).is_ok();
            if !feasible {
                point = i;
                break;
            }
        }
        if let Some(forced) = self.redistribute_at {
            if forced > self.nodes.len() {
                return Err(Error::Config(format!("redistribution point {forced} is past the last layer")));
            }
            if forced > point {
                return Err(Error::Config(format!(
                    "cannot redistribute at `{}`: `{}` already needs the sample-parallel layout",
                    self.nodes.get(forced).map_or("end", |n| &n.name),
                    self.nodes[point].name
                )));
            }
            point = forced;
        }
        let mut values = vec![input];
        for i in 0..self.nodes.len() {
            values.push(if i >= point {
                sample_parallel(shapes[i + 1], ranks)
            } else {
                spatial_meta(shapes[i + 1]).map_err(|e: TensorError| Error::from(e).in_layer(&self.nodes[i].name))?
            });
        }
        Ok(Plan { redistribution_point: point, shapes, values, ranks })
    }
}

impl Plan {
    /// Whether node `i` runs sample-parallel.
    pub fn is_sample_parallel(&self, i: usize) -> bool {
        i >= self.redistribution_point
    }

    /// Layout in which node `node` consumes value `v`.
    pub fn input_layout(&self, node: usize, v: usize) -> DistTensorMeta {
        if self.is_sample_parallel(node) {
            sample_parallel(self.shapes[v], self.ranks)
        } else {
            self.values[v].clone()
        }
    }
}
