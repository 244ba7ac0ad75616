//! Patch-wise lane correction on rasterized point-cloud images.
//!
//! The crate covers the whole pipeline: synthetic scenes ([`synth`]), the
//! correction network ([`model`]), training and inference ([`training`]),
//! merging into global lanes ([`geo`]) and evaluation ([`metrics`]).

pub mod config;
pub mod error;
pub mod geo;
pub mod io;
pub mod lane;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod sample;
pub mod synth;
pub mod training;

pub use error::{PlcError, Result};
pub use lane::{LaneInstance, LaneRole, OffsetField, Point};
