//! Batch command-line surface over `plc-core`: synthesize data, train,
//! correct + merge + evaluate, and render overlays.

pub mod commands;
pub mod overlay;
