//! Batch front-end for zero-power trap analysis: diagnostics, critical values, power curves,
//! envelopes, trap-avoiding tests and the Queen-lattice reproduction bundle.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

pub use commands::{run, Cli, Command};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_TRAP: u8 = 2;
pub const EXIT_E_IN_SPAN: u8 = 3;
pub const EXIT_CHECKS_FAILED: u8 = 4;
