pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod linalg;
pub mod losses;
pub mod noise;
pub mod par;
pub mod pqc;
pub mod qsim;
pub mod train;

pub use error::{Error, Result};

/// Crate version recorded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
