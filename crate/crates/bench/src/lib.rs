//! Benchmarks for `pure-core` live in `benches/`.
