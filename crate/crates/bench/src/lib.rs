//! Benchmarks live in `benches/`; run `cargo bench -p ferroscope-bench`.
