//! Benchmarks for simlab-core. See `benches/core.rs`.
