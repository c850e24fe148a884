//! Criterion benchmarks for the detector; see `benches/detector.rs`.
