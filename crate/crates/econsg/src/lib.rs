//! File formats, scene directories, the file-based mask provider and the
//! command implementations behind the `econsg` binary.

pub mod commands;
pub mod container;
pub mod error;
pub mod provider;
pub mod scene_io;
pub mod spec_file;

pub use error::{IoError, Result};
