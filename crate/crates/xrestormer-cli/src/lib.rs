//! Support library behind the `xrestormer` command-line workbench: PNG
//! round-tripping, dataset manifests, benchmark reports, seed derivation,
//! and the subcommand implementations. The binary in `main.rs` is a thin
//! clap front end over [`commands`].

pub mod commands;
pub mod manifest;
pub mod pngio;
pub mod report;
pub mod util;
