use serde::{Deserialize, Serialize};

use super::graph::{LossKind, NetworkSpec, Node, INPUT};
use crate::error::{Error, Result};
use crate::layers::{ConvParams, LayerOp, PoolKind};
use crate::tensor::Shape5D;

/// Knobs of the CosmoFlow builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CosmoflowOptions {
    pub with_bn: bool,
    /// Divides every conv and hidden fc width; 1 is the published network.
    pub channel_div: usize,
    pub pool: PoolKind,
    pub leaky_slope: f64,
    pub dropout_keep: f64,
}

impl Default for CosmoflowOptions {
    fn default() -> Self {
        CosmoflowOptions {
            with_bn: false,
            channel_div: 1,
            pool: PoolKind::Average,
            leaky_slope: 0.3,
            dropout_keep: 0.8,
        }
    }
}

/// Conv widths c1..c7; c4 has stride 2.
pub const COSMOFLOW_CHANNELS: [usize; 7] = [16, 32, 64, 128, 256, 256, 256];
pub const COSMOFLOW_INPUT_CHANNELS: usize = 4;
pub const COSMOFLOW_OUTPUTS: usize = 4;

struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    /// Append a node reading `inputs`; returns its value id.
    fn push(&mut self, name: impl Into<String>, op: LayerOp, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node { name: name.into(), op, inputs });
        self.nodes.len()
    }

    fn last(&self) -> usize {
        self.nodes.len()
    }
}

pub fn build_cosmoflow(wi: usize, with_bn: bool) -> Result<NetworkSpec> {
    build_cosmoflow_with(wi, &CosmoflowOptions { with_bn, ..Default::default() })
}

/// CosmoFlow: seven 3^3 convolutions with leaky ReLU, each followed by 2^3
/// pooling while the extent is above 2, then fully connected layers
/// `256*2^3 -> 2048 -> 256 -> 4` with dropout after the hidden ones.
pub fn build_cosmoflow_with(wi: usize, opts: &CosmoflowOptions) -> Result<NetworkSpec> {
    if wi < 32 || !wi.is_power_of_two() {
        return Err(Error::UnsupportedWidth { width: wi, reason: "CosmoFlow needs a power of two >= 32".into() });
    }
    let div = opts.channel_div;
    if div == 0 || COSMOFLOW_CHANNELS.iter().any(|c| c % div != 0) {
        return Err(Error::Config(format!("channel_div {div} does not divide the channel ladder")));
    }
    let mut b = Builder { nodes: Vec::new() };
    let mut extent = wi;
    let mut channels = COSMOFLOW_INPUT_CHANNELS;
    for (i, &width) in COSMOFLOW_CHANNELS.iter().enumerate() {
        let k = i + 1;
        let out = width / div;
        let stride = if k == 4 { 2 } else { 1 };
        b.push(format!("c{k}"), LayerOp::Conv(ConvParams::cubic(channels, out, 3, stride)), vec![b.last()]);
        extent /= stride;
        if opts.with_bn {
            b.push(format!("bn{k}"), LayerOp::BatchNorm { channels: out }, vec![b.last()]);
        }
        b.push(format!("act{k}"), LayerOp::LeakyRelu { slope: opts.leaky_slope }, vec![b.last()]);
        if extent > 2 {
            b.push(format!("p{k}"), LayerOp::Pool { kind: opts.pool }, vec![b.last()]);
            extent /= 2;
        }
        channels = out;
    }
    let flat = channels * extent * extent * extent;
    let hidden = [2048 / div, 256 / div];
    let mut fin = flat;
    for (i, &h) in hidden.iter().enumerate() {
        let k = i + 1;
        b.push(format!("fc{k}"), LayerOp::FullyConnected { inputs: fin, outputs: h }, vec![b.last()]);
        b.push(format!("fc{k}_act"), LayerOp::LeakyRelu { slope: opts.leaky_slope }, vec![b.last()]);
        b.push(format!("drop{k}"), LayerOp::Dropout { keep: opts.dropout_keep }, vec![b.last()]);
        fin = h;
    }
    b.push("fc3", LayerOp::FullyConnected { inputs: fin, outputs: COSMOFLOW_OUTPUTS }, vec![b.last()]);
    let spec = NetworkSpec {
        name: "cosmoflow".into(),
        input: Shape5D::cube(1, COSMOFLOW_INPUT_CHANNELS, wi),
        nodes: b.nodes,
        loss: LossKind::Mse,
        redistribute_at: None,
    };
    spec.shapes(1)?;
    Ok(spec)
}

/// Knobs of the small U-Net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetOptions {
    pub base: usize,
    pub with_bn: bool,
    pub pool: PoolKind,
    pub leaky_slope: f64,
}

impl Default for UnetOptions {
    fn default() -> Self {
        UnetOptions { base: 4, with_bn: true, pool: PoolKind::Average, leaky_slope: 0.3 }
    }
}

pub const UNET_CLASSES: usize = 2;

pub fn build_unet_mini(wi: usize) -> Result<NetworkSpec> {
    build_unet_mini_with(wi, &UnetOptions::default())
}

/// Two down blocks of `(conv-BN-leaky) x 2` plus pooling, a bottleneck, two
/// up blocks of stride-2 deconvolution, skip concatenation and
/// `(conv-BN-leaky) x 2`, and a 1^3 two-class head.
pub fn build_unet_mini_with(wi: usize, opts: &UnetOptions) -> Result<NetworkSpec> {
    if ![16, 32, 64].contains(&wi) {
        return Err(Error::UnsupportedWidth { width: wi, reason: "the mini U-Net takes 16, 32 or 64".into() });
    }
    let f = opts.base;
    let mut b = Builder { nodes: Vec::new() };
    let double_conv = |b: &mut Builder, tag: &str, cin: usize, cout: usize| -> usize {
        let mut c = cin;
        for j in ["a", "b"] {
            b.push(format!("{tag}{j}"), LayerOp::Conv(ConvParams::cubic(c, cout, 3, 1)), vec![b.last()]);
            if opts.with_bn {
                b.push(format!("{tag}{j}_bn"), LayerOp::BatchNorm { channels: cout }, vec![b.last()]);
            }
            b.push(format!("{tag}{j}_act"), LayerOp::LeakyRelu { slope: opts.leaky_slope }, vec![b.last()]);
            c = cout;
        }
        b.last()
    };
    let skip1 = double_conv(&mut b, "down1", 1, f);
    b.push("pool1", LayerOp::Pool { kind: opts.pool }, vec![skip1]);
    let skip2 = double_conv(&mut b, "down2", f, 2 * f);
    b.push("pool2", LayerOp::Pool { kind: opts.pool }, vec![skip2]);
    double_conv(&mut b, "mid", 2 * f, 4 * f);
    let up2 = b.push("up2", LayerOp::Deconv(ConvParams::cubic(4 * f, 2 * f, 2, 2)), vec![b.last()]);
    b.push("cat2", LayerOp::Concat, vec![up2, skip2]);
    double_conv(&mut b, "dec2", 4 * f, 2 * f);
    let up1 = b.push("up1", LayerOp::Deconv(ConvParams::cubic(2 * f, f, 2, 2)), vec![b.last()]);
    b.push("cat1", LayerOp::Concat, vec![up1, skip1]);
    double_conv(&mut b, "dec1", 2 * f, f);
    b.push("head", LayerOp::Conv(ConvParams::cubic(f, UNET_CLASSES, 1, 1)), vec![b.last()]);
    debug_assert!(b.nodes[0].inputs == vec![INPUT]);
    let spec = NetworkSpec {
        name: "unet_mini".into(),
        input: Shape5D::cube(1, 1, wi),
        nodes: b.nodes,
        loss: LossKind::CrossEntropy,
        redistribute_at: None,
    };
    spec.shapes(1)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Phase;
    use crate::tensor::ProcessGrid;

    fn shape_of(spec: &NetworkSpec, name: &str) -> Shape5D {
        spec.shapes(1).unwrap()[spec.node_index(name).unwrap() + 1]
    }

    #[test]
    fn cosmoflow_128_matches_table() {
        let net = build_cosmoflow(128, false).unwrap();
        assert_eq!(shape_of(&net, "p1"), Shape5D::cube(1, 16, 64));
        assert_eq!(shape_of(&net, "p5"), Shape5D::cube(1, 256, 2));
        assert!(net.node_index("p6").is_none());
        assert_eq!(shape_of(&net, "fc1").c, 2048);
        assert_eq!(shape_of(&net, "fc2").c, 256);
        assert_eq!(net.output_shape(1).unwrap().c, 4);
        assert_eq!(net.param_count(), 9_437_636);
        let fwd = net.conv_flops(Phase::Forward).unwrap() / 1e9;
        assert!((fwd - 18.5158).abs() < 1e-3, "{fwd}");
    }

    #[test]
    fn cosmoflow_512_has_seven_pools() {
        let net = build_cosmoflow(512, false).unwrap();
        assert_eq!(shape_of(&net, "p7"), Shape5D::cube(1, 256, 2));
        assert_eq!(net.param_count(), 9_437_636);
    }

    #[test]
    fn cosmoflow_32_shape_chain() {
        let net = build_cosmoflow(32, false).unwrap();
        let pools: Vec<_> = net.nodes.iter().filter(|n| n.name.starts_with('p')).map(|n| n.name.as_str()).collect();
        assert_eq!(pools, ["p1", "p2", "p3"]);
        assert_eq!(shape_of(&net, "c4"), Shape5D::cube(1, 128, 2));
        assert_eq!(shape_of(&net, "c7"), Shape5D::cube(1, 256, 2));
        assert!(matches!(build_cosmoflow(48, false), Err(Error::UnsupportedWidth { width: 48, .. })));
        assert!(matches!(build_cosmoflow(16, false), Err(Error::UnsupportedWidth { .. })));
    }

    #[test]
    fn unet_restores_extent() {
        let net = build_unet_mini(16).unwrap();
        assert_eq!(net.output_shape(2).unwrap(), Shape5D::cube(2, 2, 16));
        assert_eq!(shape_of(&net, "cat2").c, 8 + 8);
        assert_eq!(shape_of(&net, "cat1").c, 4 + 4);
        assert!(build_unet_mini(128).is_err());
    }

    #[test]
    fn redistribution_point() {
        let net = build_cosmoflow(32, false).unwrap();
        let at = |g: &str| net.plan(g.parse::<ProcessGrid>().unwrap(), 4).unwrap().redistribution_point;
        let name = |i: usize| net.nodes[i].name.clone();
        assert_eq!(name(at("1x1x1x1")), "fc1");
        assert_eq!(name(at("1x2x1x1")), "fc1");
        // Depth 4: c4's local extent 1 cannot be strided.
        assert_eq!(name(at("1x4x1x1")), "c4");
        assert_eq!(name(at("2x2x2x1")), "fc1");
        let unet = build_unet_mini(16).unwrap();
        assert_eq!(unet.plan("1x4x1x1".parse().unwrap(), 2).unwrap().redistribution_point, unet.nodes.len());
        let err = net.plan("1x3x1x1".parse().unwrap(), 2).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
    }
}
