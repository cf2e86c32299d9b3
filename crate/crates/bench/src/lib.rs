//! Criterion benchmarks for the core crate; see `benches/core.rs`.
