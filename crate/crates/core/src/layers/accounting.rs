use super::op::LayerOp;
use crate::tensor::Shape5D;

/// Pass of a layer, as used by flop counts and kernel timings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Forward,
    BackwardData,
    BackwardFilter,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Forward, Phase::BackwardData, Phase::BackwardFilter];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Forward => "fwd",
            Phase::BackwardData => "bwd_data",
            Phase::BackwardFilter => "bwd_filter",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Floating-point operations of one pass of `op` on `inputs` (all samples).
///
/// Convolutions count a multiply and an add per tap: `2*k^3*Cin*Cout` per
/// output voxel, the same for all three passes. Other layers use small
/// per-element constants; only convolutions enter the conv-ops totals.
pub fn flop_count(op: &LayerOp, inputs: &[Shape5D], phase: Phase) -> f64 {
    let x = inputs[0];
    let elems = x.len() as f64;
    match op {
        LayerOp::Conv(p) => {
            let out: usize = p.conv_out(x.spatial()).iter().product();
            2.0 * (p.kernel_volume() * p.in_channels * p.out_channels * out * x.n) as f64
        }
        // The equivalent convolution's output grid is the deconvolution's input.
        LayerOp::Deconv(p) => 2.0 * (p.kernel_volume() * p.in_channels * p.out_channels * x.voxels() * x.n) as f64,
        LayerOp::FullyConnected { inputs: fin, outputs } => 2.0 * (fin * outputs * x.n) as f64,
        LayerOp::BatchNorm { .. } => match phase {
            Phase::Forward => 4.0 * elems,
            Phase::BackwardData => 6.0 * elems,
            Phase::BackwardFilter => 2.0 * elems,
        },
        LayerOp::Pool { .. } => match phase {
            Phase::BackwardFilter => 0.0,
            _ => elems,
        },
        LayerOp::LeakyRelu { .. } | LayerOp::Dropout { .. } => match phase {
            Phase::BackwardFilter => 0.0,
            _ => elems,
        },
        LayerOp::Concat => 0.0,
    }
}
