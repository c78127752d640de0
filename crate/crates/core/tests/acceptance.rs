//! Acceptance suite. Prints one `ACCEPTANCE <n> <name>: PASS|FAIL` line per
//! criterion and exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hybridcnn::datastore::*;
use hybridcnn::layers::Phase;
use hybridcnn::model::*;
use hybridcnn::perfmodel::*;
use hybridcnn::real::{max_abs_diff, max_rel_diff};
use hybridcnn::training::{train_epochs, TrainOptions};
use hybridcnn::{ExecMode, Fabric, ProcessGrid, Real, Shape5D, Tensor5};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn grid(s: &str) -> ProcessGrid {
    s.parse().unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(t: Duration, limit_s: u64, detail: String) -> Outcome {
    let detail = format!("{detail}; {:.1}s of {limit_s}s", t.as_secs_f64());
    check(t.as_secs() < limit_s, detail)
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

/// Worst absolute and relative deviation over the loss, every value, every
/// value gradient and the parameter gradients.
fn worst<T: Real>(dist: &GatheredStep<T>, serial: &SerialStep<T>) -> (f64, f64) {
    let mut pairs: Vec<(&[T], &[T])> = vec![(std::slice::from_ref(&dist.loss), std::slice::from_ref(&serial.loss))];
    pairs.push((&dist.grads, &serial.grads));
    for (d, s) in dist.values.iter().zip(&serial.values) {
        pairs.push((&d.data, &s.data));
    }
    for (d, s) in dist.value_grads.iter().zip(&serial.value_grads) {
        match (d, s) {
            (Some(d), Some(s)) => pairs.push((&d.data, &s.data)),
            (None, None) => {}
            _ => return (f64::INFINITY, f64::INFINITY),
        }
    }
    pairs.iter().fold((0.0, 0.0), |(a, r), (d, s)| (a.max(max_abs_diff(d, s)), r.max(max_rel_diff(d, s))))
}

fn equivalence_in<T: Real>(spec: &NetworkSpec, grids: &[&str], n: usize) -> hybridcnn::Result<(f64, f64)> {
    let state = ModelState::<T>::new(spec, 5);
    let batch = random_batch::<T>(spec, n, 17)?;
    let pass = Pass::train(step_key(3, 0));
    let serial = serial_forward_backward(spec, &mut state.clone(), &batch.x, &batch.targets, pass)?;
    let mut acc = (0.0f64, 0.0f64);
    for g in grids {
        let g = grid(g);
        let dist = run_forward_backward(&Fabric::new(g.ranks(), ExecMode::Sequential), spec, g, &state, &batch, pass)?;
        let (a, r) = worst(&dist, &serial);
        acc = (acc.0.max(a), acc.1.max(r));
    }
    Ok(acc)
}

fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let grids = ["1x2x1x1", "1x4x1x1", "1x2x2x1", "2x2x1x1"];
    let nets = [("cosmoflow-32", build_cosmoflow(32, false).unwrap()), ("unet-16", build_unet_mini(16).unwrap())];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, spec) in &nets {
        let (abs64, _) = equivalence_in::<f64>(spec, &grids, 2).map_err(|e| e.to_string())?;
        let (_, rel32) = equivalence_in::<f32>(spec, &grids, 2).map_err(|e| e.to_string())?;
        ok &= abs64 <= 1e-12 && rel32 <= 1e-5;
        details.push(format!("{name} fp64 abs {abs64:.1e} fp32 rel {rel32:.1e}"));
    }
    let t = t0.elapsed();
    within(t, 120, details.join(", ")).and_then(|d| check(ok, d.clone()).map_err(|_| d))
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let checks = common::gradient_checks();
    let (name, err) = checks.iter().fold(("", 0.0f64), |acc, (n, e)| if *e > acc.1 { (n, *e) } else { acc });
    let ok = checks.iter().all(|(_, e)| *e <= 1e-6);
    let detail = format!("{} checks, worst {name} rel {err:.1e}", checks.len());
    within(t0.elapsed(), 60, detail).and_then(|d| check(ok, d.clone()).map_err(|_| d))
}

fn partition_invariance() -> Outcome {
    let t0 = Instant::now();
    let opts = CosmoflowOptions { with_bn: true, channel_div: 4, ..Default::default() };
    let nets =
        [("cosmoflow-32-bn", build_cosmoflow_with(32, &opts).unwrap()), ("unet-16", build_unet_mini(16).unwrap())];
    let grids = ["1x1x1x1", "1x2x1x1", "2x1x1x1", "1x4x1x1", "2x2x1x1", "4x1x1x1"];
    let (mut w64, mut l32) = (0.0f64, 0.0f64);
    for (_, spec) in &nets {
        let mut run = || -> hybridcnn::Result<()> {
            let batches64: Vec<_> = (0..3).map(|k| random_batch::<f64>(spec, 4, 60 + k)).collect::<Result<_, _>>()?;
            let batches32: Vec<_> = (0..3).map(|k| random_batch::<f32>(spec, 4, 60 + k)).collect::<Result<_, _>>()?;
            let (_, s64) = train_serial(spec, &ModelState::new(spec, 9), &batches64, 1e-3, 11)?;
            let (sl32, _) = train_serial(spec, &ModelState::new(spec, 9), &batches32, 1e-3, 11)?;
            for g in grids {
                let g = grid(g);
                let fabric = Fabric::new(g.ranks(), ExecMode::Sequential);
                let (_, d64) = train_distributed(&fabric, spec, g, &ModelState::new(spec, 9), &batches64, 1e-3, 11)?;
                let (dl32, _) = train_distributed(&fabric, spec, g, &ModelState::new(spec, 9), &batches32, 1e-3, 11)?;
                w64 = w64.max(max_rel_diff(&d64.params.values, &s64.params.values));
                l32 = l32.max(max_rel_diff(&dl32, &sl32));
            }
            Ok(())
        };
        run().map_err(|e| e.to_string())?;
    }
    let detail = format!("fp64 weights rel {w64:.1e}, fp32 losses rel {l32:.1e}; {:.1}s", t0.elapsed().as_secs_f64());
    check(w64 <= 1e-10 && l32 <= 1e-4, detail)
}

fn table_one() -> Outcome {
    let gib = (1u64 << 30) as f64;
    let net = |wi| build_cosmoflow(wi, false).unwrap();
    let (n128, n256, n512) = (net(128), net(256), net(512));
    let fwd = n128.conv_flops(Phase::Forward).unwrap() / 1e9;
    let totals: Vec<f64> = [&n128, &n256, &n512].iter().map(|n| n.conv_flops_total().unwrap() / 1e9).collect();
    let params = n128.param_count() as f64;
    let mem: Vec<f64> = [&n128, &n256, &n512].iter().map(|n| n.memory_per_sample().unwrap() / gib).collect();
    let ratios = [mem[1] / mem[0], mem[2] / mem[1]];
    let ok = rel(fwd, 18.52) <= 0.02
        && totals.iter().zip([55.55, 443.8, 3550.0]).all(|(&g, w)| rel(g, w) <= 0.02)
        && rel(params, 9.44e6) <= 0.01
        && rel(mem[0], 0.824) <= 0.15
        && ratios.iter().all(|r| (r - 8.0).abs() < 0.005);
    let detail = format!(
        "fwd {fwd:.2} GF, totals {:.2}/{:.1}/{:.0} GF, params {:.3}M, memory {:.4} GiB, ratios {:.4}/{:.4}",
        totals[0],
        totals[1],
        totals[2],
        params / 1e6,
        mem[0],
        ratios[0],
        ratios[1]
    );
    check(ok, detail)
}

fn datastore() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec {
        samples: 64,
        dims: [4, 16, 16, 16],
        dtype: Dtype::Int16,
        seed: 21,
        task: SyntheticTask::Regression { outputs: 4 },
    };
    let m = generate_dataset(dir.path(), &spec).map_err(|e| e.to_string())?;
    let g = grid("2x2x1x1");
    let (batch, epochs, seed) = (8, 4, 77);
    let fabric = Fabric::new(g.ranks(), ExecMode::Sequential);
    let io = IoCounters::new();
    let s0 = epoch_schedule(seed, 0, m.len(), batch, g.groups).map_err(|e| e.to_string())?;
    let stores = fabric
        .run_all(|comm| {
            let mut st = DataStore::new(&m, g, comm.rank())?;
            st.ingest_epoch0(&m, &s0, &io)?;
            Ok(st)
        })
        .map_err(|e| e.to_string())?;
    // (epoch, iteration, rank) -> delivered ids and decoded voxels.
    let mut delivered = Vec::new();
    let mut coverage_ok = true;
    for epoch in 0..epochs {
        let sch = epoch_schedule(seed, epoch, m.len(), batch, g.groups).map_err(|e| e.to_string())?;
        let mut seen = vec![0usize; m.len()];
        for it in 0..sch.iterations() {
            let got = fabric
                .run_all(|comm| {
                    let d = stores[comm.rank()].exchange_for_iteration(comm, &sch, it, &io)?;
                    let ids = d.ids.clone();
                    let b = stores[comm.rank()].materialize::<f64>(&m, &sch, it, d)?;
                    Ok((ids, b.x.data))
                })
                .map_err(|e| e.to_string())?;
            for (rank, (ids, x)) in got.into_iter().enumerate() {
                if g.coord(rank).spatial == [0; 3] {
                    for &s in &ids {
                        seen[s] += 1;
                    }
                }
                delivered.push((epoch, it, rank, ids, x));
            }
        }
        coverage_ok &= seen.iter().all(|&c| c == 1);
    }
    let per_epoch = io.per_epoch();
    let epoch0 = per_epoch.get(&0).map_or(0, |e| e.file_bytes_read);
    let later: u64 = (1..epochs).map(|e| io.epoch(e).file_bytes_read).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probe_io = IoCounters::new();
    let mut probes_ok = true;
    for _ in 0..100 {
        let (_, _, rank, ids, x) = &delivered[rng.gen_range(0..delivered.len())];
        let region = stores[*rank].region();
        let mut want = Vec::new();
        for &s in ids {
            let (_, v) = read_hyperslab(&m.sample_path(s), &region, &probe_io, 0).map_err(|e| e.to_string())?;
            want.extend(decode_voxels::<f64>(m.dtype, &v));
        }
        probes_ok &= *x == want;
    }
    let ok = epoch0 == m.dataset_bytes() && later == 0 && coverage_ok && probes_ok;
    let detail = format!(
        "epoch-0 read {epoch0} of {} B, later epochs {later} B, coverage {}, 100 probes {}",
        m.dataset_bytes(),
        if coverage_ok { "exact" } else { "wrong" },
        if probes_ok { "match" } else { "differ" }
    );
    within(t0.elapsed(), 60, detail).and_then(|d| check(ok, d.clone()).map_err(|_| d))
}

fn perf_model() -> Outcome {
    let spec = build_cosmoflow(512, false).unwrap();
    let run = || -> Result<(f64, f64, f64, f64), PerfError> {
        let flops = ProportionalModel { basis: WorkBasis::Flops, seconds_per_unit: 1e-12 };
        let m = PerfModels { comp: &flops, link: LinkModel::free(), allreduce: None, elem_bytes: 4 };
        let b = total_cost(&spec, ProcessGrid::single(), 1, &m)?;
        let all: f64 = b.layers.iter().map(|l| l.fp + l.bd + l.bf).sum();
        let c1 = b.layers.iter().find(|l| l.name == "c1").expect("c1");
        let share = (c1.fp + c1.bd + c1.bf) / all;

        let elems = ProportionalModel { basis: WorkBasis::Elements, seconds_per_unit: 2f64.powi(-30) };
        let m = PerfModels { comp: &elems, ..m };
        let b8 = total_cost(&spec, grid("1x8x1x1"), 16, &m)?;
        let b16 = total_cost(&spec, grid("1x16x1x1"), 16, &m)?;
        let halving = b8.comp / b16.comp;

        let (alpha, beta) = (3.5e-6, 2.5e-10);
        let link = LinkModel::new(alpha, beta);
        let pp: Vec<_> = [64u64, 4096, 1 << 16, 1 << 22]
            .iter()
            .map(|&bytes| PingPongSample { bytes, seconds: link.time(bytes) })
            .collect();
        let fit = fit_link(&pp)?;
        let link_err = (rel(fit.alpha, alpha)).max(rel(fit.beta, beta));
        let (c0, c1c, c2) = (-9.25, 0.85, 0.4);
        let coll = CollectiveModel { c0, c1: c1c, c2, residual: 0.0 };
        let mut ar = Vec::new();
        for elements in [1u64 << 10, 1 << 14, 1 << 18, 1 << 22] {
            for ranks in [2usize, 4, 16, 64] {
                ar.push(AllreduceSample { elements, ranks, seconds: coll.time(elements, ranks) });
            }
        }
        let back = fit_allreduce(&ar)?;
        let coll_err = (back.c0 - c0).abs().max((back.c1 - c1c).abs()).max((back.c2 - c2).abs());
        Ok((share, halving, link_err, coll_err))
    };
    let (share, halving, link_err, coll_err) = run().map_err(|e| e.to_string())?;
    let detail = format!(
        "conv1 share {share:.3}, comp ratio 1x8/1x16 {halving}, link fit rel err {link_err:.1e}, allreduce fit err {coll_err:.1e}"
    );
    check((0.35..=0.55).contains(&share) && halving == 2.0 && link_err <= 1e-6 && coll_err <= 1e-6, detail)
}

fn bits<T: Real>(v: &[T]) -> Vec<u64> {
    v.iter().map(|x| x.to_f64c().to_bits()).collect()
}

fn determinism() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec =
        build_cosmoflow_with(32, &CosmoflowOptions { with_bn: true, channel_div: 4, ..Default::default() }).unwrap();
    let data = SyntheticSpec {
        samples: 12,
        dims: [4, 32, 32, 32],
        dtype: Dtype::Int16,
        seed: 2,
        task: SyntheticTask::Regression { outputs: 4 },
    };
    let m = generate_dataset(&dir.path().join("a"), &data).map_err(|e| e.to_string())?;
    let again = generate_dataset(&dir.path().join("b"), &data).map_err(|e| e.to_string())?;
    let files_same = (0..m.len()).all(|i| {
        std::fs::read(m.sample_path(i)).ok() == std::fs::read(again.sample_path(i)).ok()
            && m.samples[i].target == again.samples[i].target
    });
    let (train, val) = m.split(8);
    let g = grid("2x2x1x1");
    let opts = TrainOptions { batch: 4, epochs: 2, eta: 1e-3, seed: 13 };
    let state = ModelState::<f32>::new(&spec, 13);
    let fingerprint = |mode| -> hybridcnn::Result<(Vec<u64>, Vec<u64>)> {
        let r = train_epochs(&Fabric::new(g.ranks(), mode), &spec, g, &state, &train, Some(&val), &opts)?;
        let metrics = r.metrics.iter().flat_map(|e| [e.train_loss.to_bits(), e.val_loss.unwrap_or(f64::NAN).to_bits()]);
        Ok((metrics.collect(), bits(&r.state.params.values)))
    };
    let first = fingerprint(ExecMode::Sequential).map_err(|e| e.to_string())?;
    let rerun = fingerprint(ExecMode::Sequential).map_err(|e| e.to_string())?;
    let parallel = fingerprint(ExecMode::Parallel).map_err(|e| e.to_string())?;

    let batch = random_batch::<f64>(&spec, 4, 3).map_err(|e| e.to_string())?;
    let st64 = ModelState::<f64>::new(&spec, 4);
    let step = |mode| -> hybridcnn::Result<Vec<u64>> {
        let s =
            run_forward_backward(&Fabric::new(g.ranks(), mode), &spec, g, &st64, &batch, Pass::train(step_key(1, 0)))?;
        let mut out = bits(&s.grads);
        out.extend(s.values.iter().flat_map(|v| bits(&v.data)));
        Ok(out)
    };
    let step_same = step(ExecMode::Sequential).map_err(|e| e.to_string())?
        == step(ExecMode::Parallel).map_err(|e| e.to_string())?;

    let ok = files_same && first == rerun && first == parallel && step_same;
    let detail = format!(
        "fixtures {}, training rerun {}, training parallel {}, forward/backward parallel {}",
        if files_same { "identical" } else { "differ" },
        if first == rerun { "identical" } else { "differs" },
        if first == parallel { "identical" } else { "differs" },
        if step_same { "identical" } else { "differs" },
    );
    check(ok, format!("{detail}; {:.1}s", t0.elapsed().as_secs_f64()))
}

fn load_batches(m: &Manifest, n: usize, steps: usize) -> Result<Vec<Batch<f32>>, DataError> {
    let [c, d, h, w] = m.dims;
    (0..steps)
        .map(|k| {
            let (mut x, mut t) = (Vec::new(), Vec::new());
            for j in 0..n {
                let id = (k * n + j) % m.len();
                let (hdr, bytes) = read_sample(&m.sample_path(id))?;
                x.extend(decode_voxels::<f32>(hdr.dtype, &bytes));
                t.extend(m.samples[id].target.iter().flatten().map(|&v| v as f32));
            }
            let shape = Shape5D::new(n, c, d, h, w).expect("shape");
            Ok(Batch { x: Tensor5::from_vec(shape, x).expect("data"), targets: Targets::Regression(t) })
        })
        .collect()
}

fn smoke_learning() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = build_cosmoflow(32, false).unwrap();
    let data = SyntheticSpec {
        samples: 16,
        dims: [4, 32, 32, 32],
        dtype: Dtype::Int16,
        seed: 7,
        task: SyntheticTask::Regression { outputs: 4 },
    };
    let m = generate_dataset(dir.path(), &data).map_err(|e| e.to_string())?;
    let batches = load_batches(&m, 2, 50).map_err(|e| e.to_string())?;
    let fabric = Fabric::new(1, ExecMode::Sequential);
    let state = ModelState::<f32>::new(&spec, 1);
    let (losses, _) = train_distributed(&fabric, &spec, ProcessGrid::single(), &state, &batches, 3e-4, 3)
        .map_err(|e| e.to_string())?;
    let first = losses[0] as f64;
    let tail: f64 = losses[45..].iter().map(|&l| l as f64).sum::<f64>() / 5.0;
    let detail = format!(
        "step 1 loss {first:.4}, last step {:.4}, mean of last 5 {tail:.4}, drop {:.1}x",
        losses[49],
        first / tail
    );
    within(t0.elapsed(), 120, detail).and_then(|d| check(first / tail >= 10.0, d.clone()).map_err(|_| d))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("gradient checks", gradient_checks),
        ("partition invariance", partition_invariance),
        ("table I reproduction", table_one),
        ("datastore", datastore),
        ("performance model", perf_model),
        ("determinism", determinism),
        ("smoke learning", smoke_learning),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(d) => println!("ACCEPTANCE {} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("ACCEPTANCE {} {name}: FAIL ({d})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
