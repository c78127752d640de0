use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hybridcnn::layers::reference::conv3d_ref;
use hybridcnn::layers::{dist_conv3d, flop_count, ConvParams, LayerOp, Phase};
use hybridcnn::tensor::make_partition;
use hybridcnn::{DistTensor, ExecMode, Fabric, ProcessGrid, Shape5D, Tensor5};

fn fill(len: usize) -> Vec<f32> {
    (0..len).map(|i| ((i * 7919) % 113) as f32 / 113.0 - 0.5).collect()
}

fn conv(c: &mut Criterion) {
    let p = ConvParams::cubic(16, 16, 3, 1);
    let shape = Shape5D::cube(1, 16, 32);
    let x = Tensor5::from_vec(shape, fill(shape.len())).unwrap();
    let w = fill(p.weight_len());
    let mut g = c.benchmark_group("conv3d_16x16_32cubed");
    g.throughput(Throughput::Elements(flop_count(&LayerOp::Conv(p), &[shape], Phase::Forward) as u64));
    g.sample_size(10);
    g.bench_function("serial", |b| b.iter(|| conv3d_ref(&x, &w, &p).unwrap()));
    for grid in ["1x2x1x1", "1x2x2x2"] {
        let grid: ProcessGrid = grid.parse().unwrap();
        let meta = make_partition(shape, grid, [0; 3]).unwrap();
        let fabric = Fabric::new(grid.ranks(), ExecMode::Parallel);
        g.bench_with_input(BenchmarkId::new("distributed", grid), &grid, |b, _| {
            b.iter(|| {
                fabric
                    .run_all(|comm| {
                        let part = DistTensor::scatter(&x, &meta, comm.rank())?;
                        dist_conv3d(comm, &part, &w, &p)
                    })
                    .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, conv);
criterion_main!(benches);
