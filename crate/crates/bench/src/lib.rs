//! Benchmarks live in `benches/`; run them with `cargo bench -p cdpr-bench`.

pub use cdpr;
