//! File formats, reports, SVG rendering and the command line for
//! [`dlmm_core`].

pub mod cli;
mod error;
pub mod io;
pub mod report;
pub mod run;
pub mod svg;

pub use error::{Error, Result};
