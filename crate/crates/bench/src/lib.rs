//! Benchmarks for the `nblda` crate live under `benches/`.
