use anyhow::Result;
use hybridcnn::layers::Phase;

use crate::net::NetArgs;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    net: NetArgs,
    /// Input widths to tabulate (repeatable); `--wi` is ignored.
    #[arg(long = "width", default_values_t = [128usize, 256, 512])]
    widths: Vec<usize>,
}

pub fn run(a: Args) -> Result<bool> {
    println!("wi,fwd_conv_gflops,total_conv_gflops,params,memory_gib");
    for &wi in &a.widths {
        let spec = NetArgs { wi, ..a.net.clone() }.build()?;
        println!(
            "{wi},{:.4},{:.4},{},{:.4}",
            spec.conv_flops(Phase::Forward)? / 1e9,
            spec.conv_flops_total()? / 1e9,
            spec.param_count(),
            spec.memory_per_sample()? / (1u64 << 30) as f64
        );
    }
    Ok(true)
}
