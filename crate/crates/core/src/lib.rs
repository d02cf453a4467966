//! Transformer surrogate for transient heat conduction through a finite
//! layer bonded to a semi-infinite substrate, with two-stage inverse
//! identification of the layer's thermal properties.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod model;
pub mod oracle;
pub mod physics;
pub mod report;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
