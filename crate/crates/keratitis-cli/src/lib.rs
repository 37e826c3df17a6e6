//! Pipeline surface of the keratitis classification toolkit: run
//! configuration, file formats, checkpoints, the staged pipeline and the
//! report renderer. The algorithms live in `keratitis-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod formats;
pub mod log;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use pipeline::Workspace;
