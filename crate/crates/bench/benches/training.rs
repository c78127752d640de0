use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hybridcnn::model::{
    build_cosmoflow, build_cosmoflow_with, random_batch, run_forward_backward, serial_forward_backward,
    CosmoflowOptions, ModelState, Pass,
};
use hybridcnn::perfmodel::{total_cost, LinkModel, PerfModels, ProportionalModel, WorkBasis};
use hybridcnn::{ExecMode, Fabric, ProcessGrid};

fn step(c: &mut Criterion) {
    let spec = build_cosmoflow_with(32, &CosmoflowOptions { channel_div: 4, ..Default::default() }).unwrap();
    let state = ModelState::<f32>::new(&spec, 0);
    let batch = random_batch::<f32>(&spec, 2, 1).unwrap();
    let mut g = c.benchmark_group("cosmoflow32_step");
    g.sample_size(10);
    g.bench_function("serial", |b| {
        b.iter(|| serial_forward_backward(&spec, &mut state.clone(), &batch.x, &batch.targets, Pass::eval()).unwrap())
    });
    for grid in ["1x2x1x1", "2x1x1x1", "1x2x2x1"] {
        let grid: ProcessGrid = grid.parse().unwrap();
        let fabric = Fabric::new(grid.ranks(), ExecMode::Parallel);
        g.bench_with_input(BenchmarkId::new("distributed", grid), &grid, |b, &grid| {
            b.iter(|| run_forward_backward(&fabric, &spec, grid, &state, &batch, Pass::eval()).unwrap())
        });
    }
    g.finish();
}

fn perf_model(c: &mut Criterion) {
    let spec = build_cosmoflow(512, true).unwrap();
    let comp = ProportionalModel { basis: WorkBasis::Flops, seconds_per_unit: 1e-13 };
    let models = PerfModels { comp: &comp, link: LinkModel::new(2e-6, 1e-10), allreduce: None, elem_bytes: 4 };
    let grid: ProcessGrid = "4x16x1x1".parse().unwrap();
    c.bench_function("perfmodel_cosmoflow512_64ranks", |b| b.iter(|| total_cost(&spec, grid, 64, &models).unwrap()));
}

criterion_group!(benches, step, perf_model);
criterion_main!(benches);
