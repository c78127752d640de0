//! Network graphs, their placement on a process grid, serial and distributed
//! execution, and optimizers.

mod builders;
mod config;
mod dist;
mod driver;
mod graph;
mod optim;
mod params;
mod serial;
mod verify;

pub use builders::{
    build_cosmoflow, build_cosmoflow_with, build_unet_mini, build_unet_mini_with, CosmoflowOptions, UnetOptions,
    COSMOFLOW_CHANNELS, COSMOFLOW_INPUT_CHANNELS, COSMOFLOW_OUTPUTS, UNET_CLASSES,
};
pub use config::NetworkConfig;
pub use dist::{dist_forward_backward, dist_loss, dist_train_step, DistStep, DistTargets};
pub use driver::{
    run_forward_backward, scatter_targets, step_key, train_distributed, train_serial, Batch, GatheredStep,
};
pub use graph::{LossKind, NetworkSpec, Node, Plan, INPUT};
pub use optim::{adam_step, lr_at, sgd_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LR_FINAL_FACTOR, LR_HORIZON};
pub use params::{ModelState, ParamSet};
pub use serial::{serial_forward_backward, serial_loss, Pass, SerialStep, Targets};
pub use verify::{compare_with_serial, random_batch, Deviation};
