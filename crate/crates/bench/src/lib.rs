//! Criterion benchmarks for the numerical core live under `benches/`.
