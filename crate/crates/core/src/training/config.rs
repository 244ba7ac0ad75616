use serde::{Deserialize, Serialize};

use crate::config::{bad, KeyValues};
use crate::error::Result;

/// Training hyperparameters. Config-file keys are the field names, with
/// `M` and `P` in upper case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Last epoch (1-based) trained at `lr`.
    pub lr_drop_epoch: usize,
    pub lr_after_drop: f64,
    pub batch_size: usize,
    pub net_height: usize,
    pub net_width: usize,
    /// Points per resampled lane.
    #[serde(rename = "M")]
    pub m: usize,
    /// Patch side.
    #[serde(rename = "P")]
    pub p: usize,
    pub seg_loss_weight: f64,
    pub offset_loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 0.001,
            lr_drop_epoch: 50,
            lr_after_drop: 0.0001,
            batch_size: 2,
            net_height: 640,
            net_width: 320,
            m: 32,
            p: 6,
            seg_loss_weight: 1.0,
            offset_loss_weight: 1.0,
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: [&str; 12] = [
    "epochs",
    "lr",
    "lr_drop_epoch",
    "lr_after_drop",
    "batch_size",
    "net_height",
    "net_width",
    "M",
    "P",
    "seg_loss_weight",
    "offset_loss_weight",
    "seed",
];

impl TrainConfig {
    /// Defaults overridden by the keys present in `text`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, &TRAIN_KEYS)?;
        let mut c = Self::default();
        kv.read("epochs", &mut c.epochs)?;
        kv.read("lr", &mut c.lr)?;
        kv.read("lr_drop_epoch", &mut c.lr_drop_epoch)?;
        kv.read("lr_after_drop", &mut c.lr_after_drop)?;
        kv.read("batch_size", &mut c.batch_size)?;
        kv.read("net_height", &mut c.net_height)?;
        kv.read("net_width", &mut c.net_width)?;
        kv.read("M", &mut c.m)?;
        kv.read("P", &mut c.p)?;
        kv.read("seg_loss_weight", &mut c.seg_loss_weight)?;
        kv.read("offset_loss_weight", &mut c.offset_loss_weight)?;
        kv.read("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "epochs = {}\nlr = {}\nlr_drop_epoch = {}\nlr_after_drop = {}\nbatch_size = {}\nnet_height = {}\n\
             net_width = {}\nM = {}\nP = {}\nseg_loss_weight = {}\noffset_loss_weight = {}\nseed = {}\n",
            self.epochs,
            self.lr,
            self.lr_drop_epoch,
            self.lr_after_drop,
            self.batch_size,
            self.net_height,
            self.net_width,
            self.m,
            self.p,
            self.seg_loss_weight,
            self.offset_loss_weight,
            self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("net_height", self.net_height), ("net_width", self.net_width)] {
            if v == 0 || v % 16 != 0 {
                return Err(bad(key, format!("{v} is not a positive multiple of 16")));
            }
        }
        if self.m < 2 {
            return Err(bad("M", "must be at least 2"));
        }
        if self.p < 2 {
            return Err(bad("P", "must be at least 2"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be positive"));
        }
        for (key, v) in [
            ("lr", self.lr),
            ("lr_after_drop", self.lr_after_drop),
            ("seg_loss_weight", self.seg_loss_weight),
            ("offset_loss_weight", self.offset_loss_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(key, format!("{v} is not a finite non-negative number")));
            }
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_drop_epoch {
            self.lr
        } else {
            self.lr_after_drop
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::PlcError;

    #[test]
    fn defaults_and_schedule() {
        let c = TrainConfig::default();
        assert!((1..=50).all(|e| c.lr_at(e) == 0.001));
        assert!((51..=60).all(|e| c.lr_at(e) == 0.0001));
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(TrainConfig::from_kv("lr_decay = 3"), Err(PlcError::UnknownConfigKey { .. })));
        assert!(TrainConfig::from_kv("net_height = 100").is_err());
        assert!(TrainConfig::from_kv("M = 1").is_err());
        assert!(TrainConfig::from_kv("P = 1").is_err());
        assert!(TrainConfig::from_kv("m = 8").is_err());
        assert_eq!(TrainConfig::from_kv("M = 8\nP = 4").unwrap().p, 4);
    }
}
