use std::path::Path;

use serde::{Deserialize, Serialize};

use super::builders::{build_cosmoflow_with, build_unet_mini_with, CosmoflowOptions, UnetOptions};
use super::graph::{LossKind, NetworkSpec, Node, INPUT};
use crate::error::{Error, Result};
use crate::layers::LayerOp;
use crate::tensor::Shape5D;

/// A network described in TOML: one of the built-in families with its knobs,
/// or an explicit layer list.
///
/// ```toml
/// net = "cosmoflow"
/// wi = 64
/// redistribute_at = "fc1"
/// [cosmoflow]
/// with_bn = true
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// `cosmoflow`, `unet` or `custom`.
    pub net: String,
    /// Input width of the built-in families.
    pub wi: Option<usize>,
    /// Name of the first layer to run sample-parallel.
    pub redistribute_at: Option<String>,
    #[serde(default)]
    pub cosmoflow: CosmoflowOptions,
    #[serde(default)]
    pub unet: UnetOptions,
    /// Custom networks: `[channels, depth, height, width]` of one sample.
    pub input: Option<[usize; 4]>,
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub layers: Vec<LayerConfig>,
}

/// One layer of a custom network, e.g.
/// `{ name = "c1", type = "conv", in_channels = 1, out_channels = 4, kernel = [3, 3, 3], stride = [1, 1, 1] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub name: String,
    /// Names of the consumed values (`input` or a layer); defaults to the
    /// previous layer.
    pub inputs: Option<Vec<String>>,
    #[serde(flatten)]
    pub op: LayerOp,
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("network config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn build(&self) -> Result<NetworkSpec> {
        let need_wi = || self.wi.ok_or_else(|| Error::Config(format!("`{}` needs `wi`", self.net)));
        let mut spec = match self.net.as_str() {
            "cosmoflow" => build_cosmoflow_with(need_wi()?, &self.cosmoflow)?,
            "unet" | "unet_mini" => build_unet_mini_with(need_wi()?, &self.unet)?,
            "custom" => self.build_custom()?,
            other => return Err(Error::Config(format!("unknown network `{other}`"))),
        };
        if let Some(name) = &self.redistribute_at {
            let i = spec.node_index(name).ok_or_else(|| Error::Config(format!("no layer named `{name}`")))?;
            spec.redistribute_at = Some(i);
        }
        Ok(spec)
    }

    fn build_custom(&self) -> Result<NetworkSpec> {
        let [c, d, h, w] = self.input.ok_or_else(|| Error::Config("custom networks need `input`".into()))?;
        let loss = self.loss.ok_or_else(|| Error::Config("custom networks need `loss`".into()))?;
        if self.layers.is_empty() {
            return Err(Error::Config("custom network without layers".into()));
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            if l.name == "input" || nodes.iter().any(|n| n.name == l.name) {
                return Err(Error::Config(format!("duplicate layer name `{}`", l.name)));
            }
            let inputs = match &l.inputs {
                None => vec![nodes.len()],
                Some(names) => names
                    .iter()
                    .map(|s| match s.as_str() {
                        "input" => Ok(INPUT),
                        s => nodes
                            .iter()
                            .position(|n| n.name == s)
                            .map(|i| i + 1)
                            .ok_or_else(|| Error::Config(format!("layer `{}` reads unknown `{s}`", l.name))),
                    })
                    .collect::<Result<_>>()?,
            };
            if inputs.len() != l.op.arity() {
                return Err(Error::Config(format!("layer `{}` takes {} inputs", l.name, l.op.arity())));
            }
            nodes.push(Node { name: l.name.clone(), op: l.op.clone(), inputs });
        }
        let spec = NetworkSpec {
            name: "custom".into(),
            input: Shape5D::new(1, c, d, h, w)?,
            nodes,
            loss,
            redistribute_at: None,
        };
        spec.shapes(1)?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_with_redistribution() {
        let cfg = NetworkConfig::from_toml(
            "net = \"cosmoflow\"\nwi = 64\nredistribute_at = \"c5\"\n[cosmoflow]\nwith_bn = true\n",
        )
        .unwrap();
        let spec = cfg.build().unwrap();
        assert_eq!(spec.redistribute_at, spec.node_index("c5"));
        assert!(spec.node_index("bn3").is_some());
        assert!(NetworkConfig::from_toml("net = \"cosmoflow\"\nbogus = 1\n").is_err());
        assert!(NetworkConfig::from_toml("net = \"cosmoflow\"\n").unwrap().build().is_err());
    }

    #[test]
    fn custom_layers() {
        let text = r#"
net = "custom"
input = [1, 8, 8, 8]
loss = "cross_entropy"
[[layers]]
name = "c1"
type = "conv"
in_channels = 1
out_channels = 2
kernel = [3, 3, 3]
stride = [1, 1, 1]
[[layers]]
name = "act"
type = "leaky_relu"
slope = 0.1
[[layers]]
name = "cat"
type = "concat"
inputs = ["act", "c1"]
[[layers]]
name = "head"
type = "conv"
in_channels = 4
out_channels = 2
kernel = [1, 1, 1]
stride = [1, 1, 1]
"#;
        let spec = NetworkConfig::from_toml(text).unwrap().build().unwrap();
        assert_eq!(spec.nodes[2].inputs, vec![2, 1]);
        assert_eq!(spec.output_shape(3).unwrap(), Shape5D::cube(3, 2, 8));
    }
}
