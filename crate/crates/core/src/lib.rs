//! Smartphone photo-scan data machinery: rectification of captured prints,
//! global and sliding-window local alignment against ground truth,
//! degradation-domain simulation, patch dataset construction and
//! similarity metrics.

pub mod config;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod filter;
pub mod io;
pub mod local_align;
pub mod metrics;
pub mod raster;
pub mod rectify;
pub mod registration;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{Raster, Rotation, Size};
pub use registration::{Homography, Point2};
