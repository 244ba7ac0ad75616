//! Losses, lane resampling, the training loop and inference.

mod config;
pub mod loss;
pub mod preprocess;
mod resample;
mod trainer;

pub use config::{TrainConfig, TRAIN_KEYS};
pub use resample::resample_lane;
pub use trainer::{correct, correct_net, train, train_with, Checkpoint, EpochRecord};
