//! One module per subcommand. Each exposes an argument struct for clap and
//! a `run` function returning the shared error type; exit-code mapping
//! happens once in `main`.

pub mod audit;
pub mod degrade;
pub mod eval;
pub mod report;
pub mod train;
