//! Benchmarks for `odcal-core` live in `benches/`.
