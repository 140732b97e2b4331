//! Criterion benchmarks for `lcprobe`; see `benches/core.rs`.
