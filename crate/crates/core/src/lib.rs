#![no_std]
extern crate alloc;

pub mod autoencoder;
pub mod cloud;
pub mod contextual;
pub mod crr;
pub mod error;
pub mod geometry;
pub mod math;
pub mod optim;
pub mod pipeline;
pub mod query;
pub mod scene;
pub mod splat;
pub mod synth;
pub mod training;

pub use cloud::GaussianCloud;
pub use error::{Error, Result};
pub use scene::{CameraPose, LabelMap, QuerySet, Raster, View, IGNORE_LABEL};
