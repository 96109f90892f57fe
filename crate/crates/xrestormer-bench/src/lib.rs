//! Benchmark-only crate; see the `benches/` directory. It exists so
//! `cargo bench` has a workspace member to hang the criterion targets on
//! and exports nothing.
