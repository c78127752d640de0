use anyhow::{Context, Result};
use hybridcnn::layers::DropoutKey;
use hybridcnn::model::{compare_with_serial, random_batch, Deviation, ModelState, NetworkSpec, Pass};
use hybridcnn::{Fabric, ProcessGrid, Real};

use crate::net::{fabric, parse_grid, NetArgs, Precision};

/// Absolute tolerance against the fp64 oracle.
const TOL_ABS_FP64: f64 = 1e-12;
/// Relative tolerance against the fp32 oracle.
const TOL_REL_FP32: f64 = 1e-5;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    net: NetArgs,
    /// Process grid `GxPDxPHxPW`.
    #[arg(long, default_value = "1x2x1x1", value_parser = parse_grid)]
    grid: ProcessGrid,
    /// Mini-batch size; defaults to twice the group count.
    #[arg(long)]
    batch: Option<usize>,
    /// Floating-point width.
    #[arg(long, value_enum, default_value = "64")]
    fp: Precision,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run rank threads concurrently.
    #[arg(long)]
    parallel_ranks: bool,
}

fn compare<T: Real>(f: &Fabric, spec: &NetworkSpec, a: &Args, n: usize) -> Result<Vec<Deviation>> {
    let state = ModelState::<T>::new(spec, a.seed);
    let batch = random_batch::<T>(spec, n, a.seed.wrapping_add(1))?;
    let pass = Pass { train: true, key: DropoutKey { seed: a.seed, epoch: 0, iteration: 0 }, input_grad: true };
    Ok(compare_with_serial(f, spec, a.grid, &state, &batch, pass)?)
}

pub fn run(a: Args) -> Result<bool> {
    let spec = a.net.build()?;
    let n = a.batch.unwrap_or(2 * a.grid.groups);
    spec.plan(a.grid, n).with_context(|| format!("--grid {} with --batch {n}", a.grid))?;
    let f = fabric(a.grid, a.parallel_ranks);
    let (devs, within): (_, Box<dyn Fn(&Deviation) -> bool>) = if a.fp == Precision::Fp64 {
        (compare::<f64>(&f, &spec, &a, n)?, Box::new(|d: &Deviation| d.max_abs <= TOL_ABS_FP64))
    } else {
        (compare::<f32>(&f, &spec, &a, n)?, Box::new(|d: &Deviation| d.max_rel <= TOL_REL_FP32))
    };
    println!("layer,quantity,max_abs,max_rel,ok");
    let mut all = true;
    for d in &devs {
        let ok = within(d);
        all &= ok;
        println!("{},{},{:.3e},{:.3e},{}", d.layer, d.quantity, d.max_abs, d.max_rel, ok);
    }
    let tol =
        if a.fp == Precision::Fp64 { format!("abs <= {TOL_ABS_FP64:e}") } else { format!("rel <= {TOL_REL_FP32:e}") };
    eprintln!("{} on {} (fp{}, N={n}): {} within {tol}", spec.name, a.grid, a.fp, if all { "all" } else { "NOT all" });
    Ok(all)
}
