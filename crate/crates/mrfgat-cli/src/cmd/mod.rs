//! Subcommand implementations, one module per verb.

pub mod bench;
pub mod eval;
pub mod gradcheck;
pub mod inspect;
pub mod prepare;
pub mod train;
