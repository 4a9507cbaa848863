//! Criterion benchmarks for the hcalab estimators; see `benches/`.
