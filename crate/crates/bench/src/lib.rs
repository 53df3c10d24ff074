//! Criterion benchmarks for the tensor kernels and the desk network; see `benches/`.
