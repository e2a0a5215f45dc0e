//! Criterion benchmarks for the kernels; see `benches/`.
