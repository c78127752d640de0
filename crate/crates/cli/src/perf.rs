use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use hybridcnn::perfmodel::{
    fit_allreduce, fit_link, read_allreduce_samples, read_pingpong_samples, synthesize_table, total_cost, CompModel,
    KernelTimeTable, LinkModel, PerfModels, ProportionalModel, WorkBasis,
};
use hybridcnn::ProcessGrid;

use crate::net::{parse_grid, NetArgs};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value = "1x1x1x1", value_parser = parse_grid)]
    grid: ProcessGrid,
    /// Global mini-batch size; defaults to the group count.
    #[arg(long)]
    batch: Option<usize>,
    /// Kernel time tables `kind,phase,n,c,d,h,w,seconds` (repeatable).
    #[arg(long = "table")]
    tables: Vec<PathBuf>,
    /// Ideal kernels: this many seconds per computed element.
    #[arg(long, conflicts_with_all = ["tables", "flop_rate"])]
    ideal: Option<f64>,
    /// Flop-proportional kernels at this many flop/s.
    #[arg(long, conflicts_with = "tables")]
    flop_rate: Option<f64>,
    /// Link latency in seconds.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Link inverse bandwidth in seconds per byte.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Ping-pong samples `bytes,seconds` to fit the link model from.
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    pingpong: Option<PathBuf>,
    /// Allreduce samples `elements,ranks,seconds`; without them allreduces
    /// are free.
    #[arg(long)]
    allreduce: Option<PathBuf>,
    /// Bytes per activation element.
    #[arg(long, default_value_t = 4)]
    elem_bytes: usize,
    /// Breakdown report (`layer,phase,seconds,bytes`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every kernel lookup the evaluation made as a table.
    #[arg(long)]
    emit_table: Option<PathBuf>,
}

pub fn run(a: Args) -> Result<bool> {
    let spec = a.net.build()?;
    let n = a.batch.unwrap_or(a.grid.groups);
    let table;
    let proportional;
    let comp: &dyn CompModel = match (a.ideal, a.flop_rate) {
        (Some(s), _) => {
            proportional = ProportionalModel { basis: WorkBasis::Elements, seconds_per_unit: s };
            &proportional
        }
        (None, Some(rate)) => {
            proportional = ProportionalModel { basis: WorkBasis::Flops, seconds_per_unit: 1.0 / rate };
            &proportional
        }
        (None, None) => {
            if a.tables.is_empty() {
                bail!("need --table, --ideal or --flop-rate");
            }
            let mut rows = Vec::new();
            for p in &a.tables {
                rows.extend(KernelTimeTable::load(p).with_context(|| format!("--table {}", p.display()))?.rows);
            }
            table = KernelTimeTable::new(rows).context("merging --table files")?;
            &table
        }
    };
    let link = match &a.pingpong {
        Some(p) => fit_link(&read_pingpong_samples(p)?).with_context(|| format!("--pingpong {}", p.display()))?,
        None => LinkModel::new(a.alpha, a.beta),
    };
    let allreduce = match &a.allreduce {
        Some(p) => {
            Some(fit_allreduce(&read_allreduce_samples(p)?).with_context(|| format!("--allreduce {}", p.display()))?)
        }
        None => None,
    };
    let models = PerfModels { comp, link, allreduce, elem_bytes: a.elem_bytes };
    let b = total_cost(&spec, a.grid, n, &models)?;
    if let Some(p) = &a.out {
        b.write_csv(p).with_context(|| format!("--out {}", p.display()))?;
    }
    if let Some(p) = &a.emit_table {
        synthesize_table(&spec, a.grid, n, comp)?.save(p).with_context(|| format!("--emit-table {}", p.display()))?;
    }
    println!("layer,fp,bd,bf,ar,comp");
    for l in &b.layers {
        println!("{},{:e},{:e},{:e},{:e},{:e}", l.name, l.fp, l.bd, l.bf, l.ar, l.comp);
    }
    println!("TOTAL,{:e},{:e},,{:e},{:e}", b.fp, b.bd_bf, b.ar, b.comp);
    println!("cost,{:e}", b.total);
    if b.extrapolated() {
        eprintln!("warning: some kernel times were extrapolated beyond the table");
    }
    Ok(true)
}
