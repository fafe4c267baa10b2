//! Criterion benchmarks of the simulator and model hot paths; see `benches/`.
