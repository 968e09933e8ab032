//! Gaussian splatting reconstruction from single-photon binary frames.

pub mod camera;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod render;
pub mod sh;
pub mod sim;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
