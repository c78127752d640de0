use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use hybridcnn::datastore::{generate_dataset, Dtype, Manifest, SyntheticSpec, SyntheticTask};
use hybridcnn::model::{LossKind, ModelState, NetworkSpec};
use hybridcnn::training::{train_epochs, EpochMetrics, TrainOptions};
use hybridcnn::{ProcessGrid, Real};

use crate::net::{fabric, parse_grid, NetArgs, Precision};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value = "1x1x1x1", value_parser = parse_grid)]
    grid: ProcessGrid,
    /// Global mini-batch size.
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Initial Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "32")]
    fp: Precision,
    /// Dataset manifest.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Generate this many synthetic training samples instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Samples held out for validation. Defaults to one mini-batch for
    /// synthetic data and none otherwise.
    #[arg(long)]
    val: Option<usize>,
    /// Metrics file (`epoch,train_loss,val_loss`).
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Run rank threads concurrently.
    #[arg(long)]
    parallel_ranks: bool,
}

fn synthetic_task(spec: &NetworkSpec) -> Result<SyntheticTask> {
    Ok(match spec.loss {
        LossKind::Mse => SyntheticTask::Regression { outputs: spec.output_shape(1)?.c },
        LossKind::CrossEntropy => SyntheticTask::Segmentation,
    })
}

fn train<T: Real>(a: &Args, spec: &NetworkSpec, train: &Manifest, val: Option<&Manifest>) -> Result<Vec<EpochMetrics>> {
    let state = ModelState::<T>::new(spec, a.seed);
    let opts = TrainOptions { batch: a.batch, epochs: a.epochs, eta: a.eta, seed: a.seed };
    let f = fabric(a.grid, a.parallel_ranks);
    let run = train_epochs(&f, spec, a.grid, &state, train, val, &opts)?;
    for (e, io) in run.io.iter().enumerate() {
        eprintln!(
            "epoch {e}: read {} B in {} opens, exchanged {} B",
            io.file_bytes_read, io.file_opens, io.exchange_bytes
        );
    }
    Ok(run.metrics)
}

pub fn run(a: Args) -> Result<bool> {
    let spec = a.net.build()?;
    let _tmp;
    let (train_set, val_set) = match (&a.data, a.synthetic) {
        (Some(path), _) => {
            let m = Manifest::load(path).with_context(|| format!("--data {}", path.display()))?;
            let held = a.val.unwrap_or(0);
            if held >= m.len() {
                bail!("--val {held} leaves no training samples out of {}", m.len());
            }
            m.split(m.len() - held)
        }
        (None, Some(samples)) => {
            let held = a.val.unwrap_or(a.batch);
            let i = spec.input;
            let synth = SyntheticSpec {
                samples: samples + held,
                dims: [i.c, i.d, i.h, i.w],
                dtype: Dtype::Int16,
                seed: a.seed,
                task: synthetic_task(&spec)?,
            };
            let dir = tempfile::tempdir().context("temporary dataset directory")?;
            let m = generate_dataset(dir.path(), &synth)?;
            _tmp = dir;
            m.split(samples)
        }
        (None, None) => bail!("need --data or --synthetic"),
    };
    let val = (!val_set.is_empty()).then_some(&val_set);
    let metrics = if a.fp == Precision::Fp64 {
        train::<f64>(&a, &spec, &train_set, val)?
    } else {
        train::<f32>(&a, &spec, &train_set, val)?
    };
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for m in &metrics {
        let val = m.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(text, "{},{},{val}", m.epoch, m.train_loss).unwrap();
    }
    std::fs::write(&a.out, text).with_context(|| format!("--out {}", a.out.display()))?;
    Ok(true)
}
