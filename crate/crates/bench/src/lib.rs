//! Benchmarks for bridgesim live in `benches/`.
