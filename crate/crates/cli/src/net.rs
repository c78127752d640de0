use std::path::PathBuf;

use anyhow::{Context, Result};
use hybridcnn::model::{CosmoflowOptions, NetworkConfig, NetworkSpec, UnetOptions};
use hybridcnn::{ExecMode, Fabric, ProcessGrid};

/// Network selection shared by the commands.
#[derive(clap::Args, Debug, Clone)]
pub struct NetArgs {
    /// `cosmoflow` or `unet_mini`.
    #[arg(long, default_value = "cosmoflow")]
    pub net: String,
    /// Input width.
    #[arg(long, default_value_t = 32)]
    pub wi: usize,
    /// Divide CosmoFlow's channel widths (1 is the published network).
    #[arg(long, default_value_t = 1)]
    pub channel_div: usize,
    /// Add batch norm after every CosmoFlow convolution.
    #[arg(long)]
    pub bn: bool,
    /// TOML network description; overrides the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl NetArgs {
    pub fn build(&self) -> Result<NetworkSpec> {
        let config = match &self.config {
            Some(path) => NetworkConfig::load(path)?,
            None => NetworkConfig {
                net: self.net.clone(),
                wi: Some(self.wi),
                redistribute_at: None,
                cosmoflow: CosmoflowOptions { with_bn: self.bn, channel_div: self.channel_div, ..Default::default() },
                unet: UnetOptions::default(),
                input: None,
                loss: None,
                layers: Vec::new(),
            },
        };
        config.build().with_context(|| format!("--net {}", config.net))
    }
}

pub fn parse_grid(s: &str) -> Result<ProcessGrid, String> {
    s.parse().map_err(|e| format!("{e}"))
}

pub fn fabric(grid: ProcessGrid, parallel: bool) -> Fabric {
    Fabric::new(grid.ranks(), if parallel { ExecMode::Parallel } else { ExecMode::Sequential })
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    #[value(name = "32")]
    Fp32,
    #[value(name = "64")]
    Fp64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if *self == Precision::Fp32 { "32" } else { "64" })
    }
}
