use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape5D, MAX_HALO};

/// Convolution geometry. Biases are never used by convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
}

impl ConvParams {
    pub fn cubic(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvParams { in_channels, out_channels, kernel: [kernel; 3], stride: [stride; 3] }
    }

    /// Leading ("same") padding `(k - 1) / 2` per dimension.
    pub fn pad(&self) -> [usize; 3] {
        self.kernel.map(|k| (k - 1) / 2)
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel_volume()
    }

    /// Output extents of a convolution: `ceil(extent / stride)`.
    pub fn conv_out(&self, input: [usize; 3]) -> [usize; 3] {
        [0, 1, 2].map(|k| input[k].div_ceil(self.stride[k]))
    }

    /// Halo radius a convolution needs on its input.
    pub fn forward_halo(&self) -> [usize; 3] {
        [0, 1, 2].map(|d| {
            let (k, s, r) = (self.kernel[d], self.stride[d], self.pad()[d]);
            r.max((k - 1).saturating_sub(r).saturating_sub(s - 1))
        })
    }

    /// Halo radius the backward-data pass needs on the output gradient.
    pub fn backward_halo(&self) -> [usize; 3] {
        [0, 1, 2].map(|d| {
            let (k, s, r) = (self.kernel[d], self.stride[d], self.pad()[d]);
            ((k - 1 - r) / s).max(r.div_ceil(s))
        })
    }
}

/// Pooling operator; the window is always `2^3` with stride 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    #[default]
    Average,
    Max,
}

/// One layer of a network graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerOp {
    Conv(ConvParams),
    /// Transposed convolution; `in_channels` are those of the deconvolution's
    /// input. Output extent is `stride * input extent`.
    Deconv(ConvParams),
    #[serde(rename = "bn")]
    BatchNorm {
        channels: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Pool {
        kind: PoolKind,
    },
    /// Channel concatenation of two inputs with identical layouts.
    Concat,
    /// Flattens `C*D*H*W` per sample; requires a sample-parallel layout.
    #[serde(rename = "fc")]
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Dropout {
        keep: f64,
    },
}

pub const POOL_WINDOW: usize = 2;

impl LayerOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerOp::Conv(_) => "conv",
            LayerOp::Deconv(_) => "deconv",
            LayerOp::BatchNorm { .. } => "bn",
            LayerOp::LeakyRelu { .. } => "leaky_relu",
            LayerOp::Pool { .. } => "pool",
            LayerOp::Concat => "concat",
            LayerOp::FullyConnected { .. } => "fc",
            LayerOp::Dropout { .. } => "dropout",
        }
    }

    /// Number of graph inputs.
    pub fn arity(&self) -> usize {
        match self {
            LayerOp::Concat => 2,
            _ => 1,
        }
    }

    /// Convolution-like layers whose parameters belong to the 3D part of a
    /// network (kernel timings, spatial partitioning).
    pub fn is_volumetric(&self) -> bool {
        matches!(self, LayerOp::Conv(_) | LayerOp::Deconv(_) | LayerOp::BatchNorm { .. } | LayerOp::Pool { .. })
    }

    /// Lengths of the parameter tensors in a fixed order.
    pub fn param_lens(&self) -> Vec<usize> {
        match self {
            LayerOp::Conv(p) | LayerOp::Deconv(p) => vec![p.weight_len()],
            LayerOp::BatchNorm { channels } => vec![*channels, *channels],
            LayerOp::FullyConnected { inputs, outputs } => vec![inputs * outputs, *outputs],
            _ => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_lens().iter().sum()
    }

    /// Output shape for the given input shapes.
    pub fn output_shape(&self, inputs: &[Shape5D]) -> Result<Shape5D> {
        if inputs.len() != self.arity() {
            return Err(Error::ShapeMismatch(format!(
                "{} takes {} inputs, got {}",
                self.kind_name(),
                self.arity(),
                inputs.len()
            )));
        }
        let x = inputs[0];
        let need_channels = |c: usize| {
            if x.c != c {
                Err(Error::ShapeMismatch(format!("expected {c} input channels, got {}", x.c)))
            } else {
                Ok(())
            }
        };
        match self {
            LayerOp::Conv(p) => {
                need_channels(p.in_channels)?;
                Ok(x.with_c(p.out_channels).with_spatial(p.conv_out(x.spatial())))
            }
            LayerOp::Deconv(p) => {
                need_channels(p.in_channels)?;
                let s = x.spatial();
                Ok(x.with_c(p.out_channels).with_spatial([0, 1, 2].map(|k| s[k] * p.stride[k])))
            }
            LayerOp::BatchNorm { channels } => {
                need_channels(*channels)?;
                Ok(x)
            }
            LayerOp::LeakyRelu { .. } | LayerOp::Dropout { .. } => Ok(x),
            LayerOp::Pool { .. } => {
                let s = x.spatial();
                if s.iter().any(|e| e % POOL_WINDOW != 0) {
                    return Err(Error::ShapeMismatch(format!("pooling needs even extents, got {x}")));
                }
                Ok(x.with_spatial(s.map(|e| e / POOL_WINDOW)))
            }
            LayerOp::Concat => {
                let b = inputs[1];
                if b.n != x.n || b.spatial() != x.spatial() {
                    return Err(Error::ShapeMismatch(format!("concat of {x} and {b}")));
                }
                Ok(x.with_c(x.c + b.c))
            }
            LayerOp::FullyConnected { inputs: fin, outputs } => {
                if x.sample_len() != *fin {
                    return Err(Error::ShapeMismatch(format!(
                        "fc expects {fin} features per sample, got {}",
                        x.sample_len()
                    )));
                }
                Ok(Shape5D { n: x.n, c: *outputs, d: 1, h: 1, w: 1 })
            }
        }
    }

    /// Whether this layer can run on an input of global extents `global`
    /// split `parts` ways per dimension without straddling a stride or
    /// pooling window across ranks or needing a halo wider than a block.
    /// Fully connected layers always need the sample-parallel layout.
    pub fn spatially_feasible(&self, global: [usize; 3], parts: [usize; 3]) -> bool {
        if matches!(self, LayerOp::FullyConnected { .. }) {
            return false;
        }
        (0..3).all(|k| {
            if parts[k] == 1 {
                return true;
            }
            if !global[k].is_multiple_of(parts[k]) {
                return false;
            }
            let local = global[k] / parts[k];
            match self {
                LayerOp::Conv(p) => {
                    let out = local / p.stride[k];
                    local.is_multiple_of(p.stride[k])
                        && out >= 1
                        && local >= p.forward_halo()[k]
                        && out >= p.backward_halo()[k]
                        && p.forward_halo()[k].max(p.backward_halo()[k]) <= MAX_HALO
                }
                LayerOp::Deconv(p) => {
                    let conv = ConvParams { in_channels: p.out_channels, out_channels: p.in_channels, ..*p };
                    local >= conv.backward_halo()[k]
                        && local * p.stride[k] >= conv.forward_halo()[k]
                        && conv.forward_halo()[k].max(conv.backward_halo()[k]) <= MAX_HALO
                }
                LayerOp::Pool { .. } => local.is_multiple_of(POOL_WINDOW),
                _ => true,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halo_radii() {
        let c3 = ConvParams::cubic(1, 1, 3, 1);
        assert_eq!(c3.forward_halo(), [1; 3]);
        assert_eq!(c3.backward_halo(), [1; 3]);
        let c3s2 = ConvParams::cubic(1, 1, 3, 2);
        assert_eq!(c3s2.forward_halo(), [1; 3]);
        assert_eq!(c3s2.backward_halo(), [1; 3]);
        let k2s2 = ConvParams::cubic(1, 1, 2, 2);
        assert_eq!(k2s2.forward_halo(), [0; 3]);
        assert_eq!(k2s2.backward_halo(), [0; 3]);
        let c5 = ConvParams::cubic(1, 1, 5, 1);
        assert_eq!(c5.forward_halo(), [2; 3]);
    }

    #[test]
    fn output_shapes() {
        let x = Shape5D::cube(2, 4, 16);
        let conv = LayerOp::Conv(ConvParams::cubic(4, 8, 3, 2));
        assert_eq!(conv.output_shape(&[x]).unwrap(), Shape5D::cube(2, 8, 8));
        let de = LayerOp::Deconv(ConvParams::cubic(4, 2, 2, 2));
        assert_eq!(de.output_shape(&[x]).unwrap(), Shape5D::cube(2, 2, 32));
        let fc = LayerOp::FullyConnected { inputs: 4 * 16 * 16 * 16, outputs: 3 };
        assert_eq!(fc.output_shape(&[x]).unwrap(), Shape5D::new(2, 3, 1, 1, 1).unwrap());
        assert!(LayerOp::Concat.output_shape(&[x, Shape5D::cube(2, 1, 8)]).is_err());
    }
}
