use std::cell::RefCell;
use std::path::Path;

use serde::Serialize;

use super::comp::{CompModel, KernelTimeTable, Lookup, TableRow};
use super::fit::{CollectiveModel, LinkModel};
use super::PerfError;
use crate::layers::reference::deconv_as_conv;
use crate::layers::{LayerOp, Phase};
use crate::model::NetworkSpec;
use crate::tensor::{ProcessGrid, Shape5D};

/// Models a cost evaluation draws on.
pub struct PerfModels<'a> {
    pub comp: &'a dyn CompModel,
    pub link: LinkModel,
    /// `None` makes every allreduce free.
    pub allreduce: Option<CollectiveModel>,
    /// Bytes per activation element.
    pub elem_bytes: usize,
}

impl PerfModels<'_> {
    fn ar(&self, elements: usize, ranks: usize) -> f64 {
        self.allreduce.map_or(0.0, |m| m.time(elements as u64, ranks))
    }
}

/// `max{Comp(D_main), sum SR} + Comp(D_halo)`.
pub fn overlapped(comp_main: f64, sr_terms: f64, comp_halo: f64) -> f64 {
    comp_main.max(sr_terms) + comp_halo
}

/// `sum FP + max{sum (BD + BF), sum AR}`.
pub fn iteration_cost(fp: f64, bd_bf: f64, ar: f64) -> f64 {
    fp + bd_bf.max(ar)
}

/// Modeled times of one layer, maximized over ranks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub fp: f64,
    pub bd: f64,
    pub bf: f64,
    /// Batch-norm statistics allreduces inside `fp` and `bd`.
    pub bn_ar: f64,
    /// Gradient allreduce.
    pub ar: f64,
    /// Kernel time of all passes over whole local domains.
    pub comp: f64,
    /// Halo bytes a rank sends per face pair, forward and backward-data.
    pub halo_bytes_fp: usize,
    pub halo_bytes_bd: usize,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub layers: Vec<LayerCost>,
    pub fp: f64,
    pub bd_bf: f64,
    pub ar: f64,
    pub comp: f64,
    pub total: f64,
}

/// One line of a serialized breakdown: `phase` is `fp`, `bd`, `bf` or `ar`
/// per layer, and `fp`, `bd_bf`, `ar`, `comp` or `total` for `TOTAL`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ReportRow {
    pub layer: String,
    pub phase: String,
    pub seconds: f64,
    pub bytes: usize,
}

impl CostBreakdown {
    fn from_layers(layers: Vec<LayerCost>) -> Self {
        let fp = layers.iter().map(|l| l.fp).sum();
        let bd_bf = layers.iter().map(|l| l.bd + l.bf).sum();
        let ar = layers.iter().map(|l| l.ar).sum();
        let comp = layers.iter().map(|l| l.comp).sum();
        CostBreakdown { layers, fp, bd_bf, ar, comp, total: iteration_cost(fp, bd_bf, ar) }
    }

    pub fn extrapolated(&self) -> bool {
        self.layers.iter().any(|l| l.extrapolated)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let row = |layer: &str, phase: &str, seconds, bytes| ReportRow {
            layer: layer.into(),
            phase: phase.into(),
            seconds,
            bytes,
        };
        let mut rows = Vec::new();
        for l in &self.layers {
            rows.push(row(&l.name, "fp", l.fp, l.halo_bytes_fp));
            rows.push(row(&l.name, "bd", l.bd, l.halo_bytes_bd));
            rows.push(row(&l.name, "bf", l.bf, 0));
            rows.push(row(&l.name, "ar", l.ar, 0));
        }
        for (phase, v) in
            [("fp", self.fp), ("bd_bf", self.bd_bf), ("ar", self.ar), ("comp", self.comp), ("total", self.total)]
        {
            rows.push(row("TOTAL", phase, v, 0));
        }
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PerfError> {
        let err = |e: csv::Error| PerfError::Parse(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for r in self.rows() {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|e| PerfError::Parse(e.to_string()))
    }
}

/// Halo a pass exchanges: radius per dimension on the tensor it reads.
fn pass_halo(op: &LayerOp, phase: Phase) -> [usize; 3] {
    match (op, phase) {
        (LayerOp::Conv(p), Phase::Forward) => p.forward_halo(),
        (LayerOp::Conv(p), Phase::BackwardData) => p.backward_halo(),
        (LayerOp::Deconv(p), Phase::Forward) => deconv_as_conv(p).backward_halo(),
        (LayerOp::Deconv(p), Phase::BackwardData) => deconv_as_conv(p).forward_halo(),
        _ => [0; 3],
    }
}

struct PassCost {
    seconds: f64,
    halo_bytes: usize,
    extrapolated: bool,
    comp: f64,
}

/// Cost of one pass on one rank. `src` is the local block of the tensor the
/// halo is read from and `domain` the block computed.
#[allow(clippy::too_many_arguments)]
fn pass_cost(
    models: &PerfModels,
    name: &str,
    op: &LayerOp,
    input: Shape5D,
    phase: Phase,
    domain: Shape5D,
    src: Shape5D,
    global_ratio: [(usize, usize); 3],
    neighbours: [usize; 3],
) -> Result<PassCost, PerfError> {
    if domain.is_empty() {
        // Sample-parallel ranks left without samples.
        return Ok(PassCost { seconds: 0.0, halo_bytes: 0, extrapolated: false, comp: 0.0 });
    }
    let full = models.comp.comp(name, op, input, phase, domain)?;
    let radii = pass_halo(op, phase);
    let (mut main, mut sr, mut bytes) = (domain, 0.0, 0);
    let src_ext = src.spatial();
    let mut dims = main.spatial();
    for d in 0..3 {
        if neighbours[d] == 0 || radii[d] == 0 {
            continue;
        }
        let other: usize = (0..3).filter(|&k| k != d).map(|k| src_ext[k]).product();
        let slab = radii[d] * other * src.c * src.n * models.elem_bytes;
        sr += 2.0 * models.link.time(slab as u64);
        bytes += slab;
        let (num, den) = global_ratio[d];
        let shell = (radii[d] * num).div_ceil(den);
        dims[d] = dims[d].saturating_sub(neighbours[d] * shell);
    }
    main = main.with_spatial(dims);
    if bytes == 0 {
        return Ok(PassCost {
            seconds: full.seconds,
            halo_bytes: 0,
            extrapolated: full.extrapolated,
            comp: full.seconds,
        });
    }
    let m: Lookup = if main.voxels() == 0 {
        Lookup { seconds: 0.0, extrapolated: false }
    } else {
        models.comp.comp(name, op, input, phase, main)?
    };
    Ok(PassCost {
        seconds: overlapped(m.seconds, sr, full.seconds - m.seconds),
        halo_bytes: bytes,
        extrapolated: full.extrapolated || m.extrapolated,
        comp: full.seconds,
    })
}

/// Modeled cost of one training iteration of `spec` on `grid` for a
/// mini-batch of `n`. Convolutions, deconvolutions, pooling and batch norm
/// carry compute; every parameterized layer carries a gradient allreduce.
pub fn total_cost(
    spec: &NetworkSpec,
    grid: ProcessGrid,
    n: usize,
    models: &PerfModels,
) -> Result<CostBreakdown, PerfError> {
    let plan = spec.plan(grid, n)?;
    let world = grid.ranks();
    let mut layers = Vec::new();
    for (i, node) in spec.nodes.iter().enumerate() {
        let op = &node.op;
        let computes =
            matches!(op, LayerOp::Conv(_) | LayerOp::Deconv(_) | LayerOp::Pool { .. } | LayerOp::BatchNorm { .. });
        let params = op.param_count();
        if !computes && params == 0 {
            continue;
        }
        let mut cost = LayerCost {
            name: node.name.clone(),
            kind: op.kind_name().into(),
            fp: 0.0,
            bd: 0.0,
            bf: 0.0,
            bn_ar: 0.0,
            ar: models.ar(params, world),
            comp: 0.0,
            halo_bytes_fp: 0,
            halo_bytes_bd: 0,
            extrapolated: false,
        };
        if computes {
            let v = node.inputs[0];
            let in_meta = plan.input_layout(i, v);
            let out_meta = &plan.values[i + 1];
            let (gin, gout) = (plan.shapes[v], plan.shapes[i + 1]);
            let input = gin.with_n(1);
            let ratio = |a: Shape5D, b: Shape5D| [0, 1, 2].map(|k| (a.spatial()[k], b.spatial()[k]));
            let bn_ar = match op {
                LayerOp::BatchNorm { channels } => models.ar(2 * channels, world),
                _ => 0.0,
            };
            let parts = grid.parts();
            for rank in 0..world {
                let (x, y) = (in_meta.local_shape(rank), out_meta.local_shape(rank));
                let coord = grid.coord(rank);
                let neighbours = [0, 1, 2].map(|d| {
                    if in_meta.is_sample_parallel() || parts[d] == 1 {
                        0
                    } else {
                        usize::from(coord.spatial[d] > 0) + usize::from(coord.spatial[d] + 1 < parts[d])
                    }
                });
                let fp = pass_cost(models, &node.name, op, input, Phase::Forward, y, x, ratio(gout, gin), neighbours)?;
                let bd =
                    pass_cost(models, &node.name, op, input, Phase::BackwardData, x, y, ratio(gin, gout), neighbours)?;
                let bf = if params > 0 {
                    pass_cost(models, &node.name, op, input, Phase::BackwardFilter, y, x, ratio(gout, gin), [0; 3])?
                } else {
                    PassCost { seconds: 0.0, halo_bytes: 0, extrapolated: false, comp: 0.0 }
                };
                cost.fp = cost.fp.max(fp.seconds + bn_ar);
                cost.bd = cost.bd.max(bd.seconds + bn_ar);
                cost.bf = cost.bf.max(bf.seconds);
                cost.comp = cost.comp.max(fp.comp + bd.comp + bf.comp);
                cost.halo_bytes_fp = cost.halo_bytes_fp.max(fp.halo_bytes);
                cost.halo_bytes_bd = cost.halo_bytes_bd.max(bd.halo_bytes);
                cost.extrapolated |= fp.extrapolated || bd.extrapolated || bf.extrapolated;
            }
            cost.bn_ar = 2.0 * bn_ar;
        }
        layers.push(cost);
    }
    Ok(CostBreakdown::from_layers(layers))
}

struct Recorder<'a> {
    inner: &'a dyn CompModel,
    rows: RefCell<Vec<TableRow>>,
}

impl CompModel for Recorder<'_> {
    fn comp(
        &self,
        name: &str,
        op: &LayerOp,
        input: Shape5D,
        phase: Phase,
        domain: Shape5D,
    ) -> Result<Lookup, PerfError> {
        let l = self.inner.comp(name, op, input, phase, domain)?;
        let mut rows = self.rows.borrow_mut();
        let row = TableRow {
            kind: name.into(),
            phase: phase.name().into(),
            n: domain.n,
            c: domain.c,
            d: domain.d,
            h: domain.h,
            w: domain.w,
            seconds: l.seconds,
        };
        if l.seconds > 0.0 && !rows.contains(&row) {
            rows.push(row);
        }
        Ok(l)
    }
}

/// Kernel table holding every lookup a cost evaluation of `spec` on `grid`
/// makes, timed by `model` and keyed by layer name.
pub fn synthesize_table(
    spec: &NetworkSpec,
    grid: ProcessGrid,
    n: usize,
    model: &dyn CompModel,
) -> Result<KernelTimeTable, PerfError> {
    let rec = Recorder { inner: model, rows: RefCell::new(Vec::new()) };
    let models = PerfModels { comp: &rec, link: LinkModel::free(), allreduce: None, elem_bytes: 4 };
    total_cost(spec, grid, n, &models)?;
    KernelTimeTable::new(rec.rows.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ConvParams;
    use crate::model::{build_cosmoflow, LossKind, Node};
    use crate::perfmodel::{ProportionalModel, WorkBasis};

    const RATE: f64 = 1.0 / (1u64 << 30) as f64;

    fn net(input: Shape5D, ops: Vec<(&str, LayerOp)>) -> NetworkSpec {
        let nodes = ops
            .into_iter()
            .enumerate()
            .map(|(i, (name, op))| Node { name: name.into(), op, inputs: vec![i] })
            .collect();
        NetworkSpec { name: "t".into(), input, nodes, loss: LossKind::Mse, redistribute_at: None }
    }

    fn elements() -> ProportionalModel {
        ProportionalModel { basis: WorkBasis::Elements, seconds_per_unit: RATE }
    }

    fn models(comp: &dyn CompModel, link: LinkModel, allreduce: Option<CollectiveModel>) -> PerfModels<'_> {
        PerfModels { comp, link, allreduce, elem_bytes: 4 }
    }

    #[test]
    fn overlap_formulas() {
        assert!((overlapped(10e-3, 2e-3, 1e-3) - 11e-3).abs() < 1e-15);
        assert!((overlapped(1e-3, 5e-3, 1e-3) - 6e-3).abs() < 1e-15);
        assert_eq!(iteration_cost(30.0, 50.0, 20.0), 80.0);
        assert_eq!(iteration_cost(30.0, 50.0, 90.0), 120.0);
    }

    #[test]
    fn unpartitioned_layer_is_pure_compute() {
        let spec = net(Shape5D::cube(1, 2, 8), vec![("c", LayerOp::Conv(ConvParams::cubic(2, 4, 3, 1)))]);
        let comp = elements();
        let m = models(&comp, LinkModel::new(1.0, 1.0), None);
        let b = total_cost(&spec, ProcessGrid::single(), 2, &m).unwrap();
        let l = &b.layers[0];
        assert_eq!(l.fp, (2 * 4 * 512) as f64 * RATE);
        assert_eq!(l.bd, (2 * 2 * 512) as f64 * RATE);
        assert_eq!(l.halo_bytes_fp, 0);
    }

    #[test]
    fn halo_split_by_hand() {
        // Depth 16 over two ranks; each rank has one neighbour face.
        let spec = net(Shape5D::cube(1, 2, 16), vec![("c", LayerOp::Conv(ConvParams::cubic(2, 4, 3, 1)))]);
        let comp = elements();
        let link = LinkModel::new(1e-3, 0.0);
        let b = total_cost(&spec, "1x2x1x1".parse().unwrap(), 1, &models(&comp, link, None)).unwrap();
        let l = &b.layers[0];
        let full = (4 * 8 * 256) as f64 * RATE;
        let main = (4 * 7 * 256) as f64 * RATE;
        assert_eq!(l.fp, overlapped(main, 2e-3, full - main));
        assert_eq!(l.halo_bytes_fp, 2 * 256 * 4);
    }

    #[test]
    fn batch_norm_adds_statistics_allreduce() {
        let spec = net(Shape5D::cube(1, 16, 8), vec![("bn", LayerOp::BatchNorm { channels: 16 })]);
        let comp = elements();
        let ar = CollectiveModel { c0: -10.0, c1: 0.5, c2: 0.25, residual: 0.0 };
        let b = total_cost(&spec, "1x2x2x2".parse().unwrap(), 1, &models(&comp, LinkModel::free(), Some(ar))).unwrap();
        let local = (16 * 64) as f64 * RATE;
        assert_eq!(b.layers[0].fp, local + ar.time(32, 8));
        assert_eq!(b.layers[0].ar, ar.time(32, 8));
        let single = total_cost(&spec, ProcessGrid::single(), 1, &models(&comp, LinkModel::free(), Some(ar))).unwrap();
        assert_eq!(single.layers[0].fp, (16 * 512) as f64 * RATE);
        assert_eq!(single.layers[0].ar, 0.0);
    }

    #[test]
    fn doubling_partitions_halves_compute() {
        let spec = build_cosmoflow(512, false).unwrap();
        let comp = elements();
        let m = models(&comp, LinkModel::free(), None);
        let b8 = total_cost(&spec, "1x8x1x1".parse().unwrap(), 16, &m).unwrap();
        let b16 = total_cost(&spec, "1x16x1x1".parse().unwrap(), 16, &m).unwrap();
        assert_eq!(b8.comp, 2.0 * b16.comp);
        assert_eq!(b8.total, 2.0 * b16.total);
    }

    #[test]
    fn conv1_dominates_cosmoflow_512() {
        let spec = build_cosmoflow(512, false).unwrap();
        let comp = ProportionalModel { basis: WorkBasis::Flops, seconds_per_unit: 1e-12 };
        let b = total_cost(&spec, ProcessGrid::single(), 1, &models(&comp, LinkModel::free(), None)).unwrap();
        let all: f64 = b.layers.iter().map(|l| l.fp + l.bd + l.bf).sum();
        let c1 = b.layers.iter().find(|l| l.name == "c1").unwrap();
        let share = (c1.fp + c1.bd + c1.bf) / all;
        assert!((0.35..=0.55).contains(&share), "{share}");
    }

    #[test]
    fn rows_resum_and_tables_reproduce() {
        let spec = build_cosmoflow(64, true).unwrap();
        let grid: ProcessGrid = "2x2x1x1".parse().unwrap();
        let comp = ProportionalModel { basis: WorkBasis::Flops, seconds_per_unit: 3e-12 };
        let ar = CollectiveModel { c0: -12.0, c1: 0.8, c2: 0.3, residual: 0.0 };
        let m = models(&comp, LinkModel::new(2e-6, 1e-10), Some(ar));
        let b = total_cost(&spec, grid, 4, &m).unwrap();
        let rows = b.rows();
        let sum = |phase: &'static str| {
            rows.iter().filter(move |r| r.layer != "TOTAL" && r.phase == phase).map(|r| r.seconds)
        };
        let fp: f64 = sum("fp").sum();
        let bd_bf: f64 = sum("bd").zip(sum("bf")).map(|(a, b)| a + b).sum();
        let ar_sum: f64 = sum("ar").sum();
        let total = rows.iter().find(|r| r.layer == "TOTAL" && r.phase == "total").unwrap().seconds;
        assert_eq!(total, iteration_cost(fp, bd_bf, ar_sum));
        assert!(total >= fp + bd_bf.max(ar_sum) && total <= fp + bd_bf + ar_sum);

        let table = synthesize_table(&spec, grid, 4, &comp).unwrap();
        let from_table = total_cost(&spec, grid, 4, &PerfModels { comp: &table, ..m }).unwrap();
        assert_eq!(from_table.total, b.total);
        assert!(!from_table.extrapolated());
    }

    #[test]
    fn ranks_without_samples_cost_nothing() {
        // One sample over four ranks leaves three idle after redistribution.
        let spec = build_cosmoflow(64, false).unwrap();
        let grid: ProcessGrid = "1x4x1x1".parse().unwrap();
        let comp = ProportionalModel { basis: WorkBasis::Flops, seconds_per_unit: 1e-13 };
        let table = synthesize_table(&spec, grid, 1, &comp).unwrap();
        let b = total_cost(&spec, grid, 1, &models(&table, LinkModel::new(1e-6, 0.0), None)).unwrap();
        assert!(!b.extrapolated());
        assert_eq!(b.total, total_cost(&spec, grid, 1, &models(&comp, LinkModel::new(1e-6, 0.0), None)).unwrap().total);
    }
}
