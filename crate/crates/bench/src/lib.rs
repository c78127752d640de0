//! Criterion benchmarks for the kernels, the distributed executor and the
//! performance model; see `benches/`.
