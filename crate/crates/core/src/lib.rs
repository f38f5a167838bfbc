//! Single-image HDR reconstruction by generating an exposure bracket from one
//! LDR photograph and merging it with a known camera response.

pub mod brackets;
pub mod cli;
pub mod config;
pub mod error;
pub mod hdr_recon;
pub mod image;
pub mod imaging;
pub mod io;
pub mod losses;
pub mod masking;
pub mod model;
pub mod nn;
pub mod quality;
pub mod trainer;

pub use error::{Error, Result};
pub use image::RgbImage;
