use std::path::PathBuf;

use anyhow::{bail, Result};
use hybridcnn::datastore::{generate_dataset, Dtype, SampleHeader, SyntheticSpec, SyntheticTask};

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum DtypeArg {
    Int16,
    Fp32,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Regression,
    Segmentation,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, default_value_t = 8)]
    samples: usize,
    /// Sample dimensions `CxDxHxW`.
    #[arg(long, default_value = "1x16x16x16", value_parser = parse_dims)]
    dims: [usize; 4],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "int16")]
    dtype: DtypeArg,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    /// Regression target length.
    #[arg(long, default_value_t = 4)]
    outputs: usize,
    /// Output directory for the samples and `manifest.toml`.
    #[arg(long, required_unless_present = "dry_run")]
    out: Option<PathBuf>,
    /// Print the sizes without writing anything.
    #[arg(long)]
    dry_run: bool,
}

fn parse_dims(s: &str) -> Result<[usize; 4], String> {
    let v: Vec<usize> =
        s.split('x').map(|p| p.parse().map_err(|_| format!("`{p}` is not a size"))).collect::<Result<_, _>>()?;
    match v.as_slice() {
        &[c, d, h, w] if v.iter().all(|&x| x > 0) => Ok([c, d, h, w]),
        _ => Err(format!("expected four positive sizes CxDxHxW, got `{s}`")),
    }
}

const GIB: f64 = (1u64 << 30) as f64;

pub fn run(a: Args) -> Result<bool> {
    let dtype = match a.dtype {
        DtypeArg::Int16 => Dtype::Int16,
        DtypeArg::Fp32 => Dtype::Fp32,
    };
    let task = match a.task {
        TaskArg::Regression => SyntheticTask::Regression { outputs: a.outputs },
        TaskArg::Segmentation => SyntheticTask::Segmentation,
    };
    let bytes = SampleHeader { dtype, dims: a.dims }.file_bytes();
    let [c, d, h, w] = a.dims;
    println!(
        "{} samples of {c}x{d}x{h}x{w} {dtype:?}: {bytes} B/sample ({:.3} GiB/sample), {:.3} GiB total",
        a.samples,
        bytes as f64 / GIB,
        (bytes * a.samples as u64) as f64 / GIB
    );
    if a.dry_run {
        return Ok(true);
    }
    let Some(out) = a.out else { bail!("--out is required") };
    let spec = SyntheticSpec { samples: a.samples, dims: a.dims, dtype, seed: a.seed, task };
    let m = generate_dataset(&out, &spec)?;
    println!("wrote {} samples and {}", m.len(), out.join("manifest.toml").display());
    Ok(true)
}
