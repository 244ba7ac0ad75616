use std::path::Path;

use plc_autodiff::{AdamConfig, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::{focal_loss, lane_offset_loss};
use super::preprocess::{prepare, Prepared};
use crate::error::{PlcError, Result};
use crate::lane::{LaneInstance, LaneRole, Point};
use crate::model::{bound_vars, checkpoint, forward, network, ModelConfig, ModelParams};
use crate::sample::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean unweighted focal loss over the epoch's batches.
    pub seg_loss: f64,
    /// Mean unweighted offset loss over the epoch's batches.
    pub offset_loss: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub fn total(&self, config: &TrainConfig) -> f64 {
        config.seg_loss_weight * self.seg_loss + config.offset_loss_weight * self.offset_loss
    }
}

/// Trained parameters plus the run that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
}

impl Checkpoint {
    /// Freshly initialized parameters for `config`, seeded by `config.seed`.
    pub fn initial(config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            params: ModelParams::init(&ModelConfig::with_patch_size(config.p), &mut rng),
            config: config.clone(),
            epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            config: self.config.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
        };
        checkpoint::encode(&self.params, &serde_json::to_string(&meta).expect("metadata serializes"))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let (meta, params) = checkpoint::decode(bytes)?;
        let meta: Metadata = serde_json::from_str(&meta).map_err(|e| format!("metadata: {e}"))?;
        meta.config.validate().map_err(|e| e.to_string())?;
        let model = params.infer_config().map_err(|e| e.to_string())?;
        if model.patch_size != meta.config.p {
            return Err(format!("patch size {} in parameters, {} in config", model.patch_size, meta.config.p));
        }
        Ok(Self {
            params,
            config: meta.config,
            epoch: meta.epoch,
            history: meta.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&crate::io::read_bytes(path)?).map_err(|d| PlcError::format(path, d))
    }
}

/// Gradients and unweighted loss parts of one image's contribution.
struct ImageGrads {
    grads: Vec<Vec<f32>>,
    focal: f64,
    /// Sum of per-point smooth-L1 over the image's lanes.
    offset_sum: f64,
}

fn image_grads(
    params: &ModelParams<f32>,
    sample: &Prepared,
    config: &TrainConfig,
    seg_scale: f64,
    offset_scale: f64,
) -> Result<ImageGrads> {
    let mut g = Graph::<f32>::new();
    let layers = params.bind(&mut g);
    let image = g.constant(sample.image.clone());
    let lanes: Vec<&[Point]> = sample.lanes.iter().map(|l| l.initial.as_slice()).collect();
    let vars = network::forward_graph(&mut g, &layers, image, &lanes, config.p)?;

    let focal = focal_loss(&mut g, vars.seg_logits, &sample.label)?;
    let focal_value = g.value(focal).data()[0] as f64;
    let mut loss = g.scale(focal, seg_scale as f32);
    let mut offset_sum = 0.0;
    for (lane, &pred) in sample.lanes.iter().zip(&vars.offsets) {
        let target = lane.target.as_ref().expect("training lanes carry targets");
        let l = lane_offset_loss(&mut g, pred, target)?;
        offset_sum += g.value(l).data()[0] as f64 * target.len() as f64;
        // per-lane mean times point count turns into a share of the batch mean
        let weighted = g.scale(l, (offset_scale * target.len() as f64) as f32);
        loss = g.add(loss, weighted)?;
    }
    if !g.value(loss).is_finite() {
        return Err(PlcError::invalid(format!("{}: non-finite loss", sample.image_id)));
    }
    g.backward(loss)?;
    let grads = bound_vars(&layers)
        .into_iter()
        .map(|v| g.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).numel()]))
        .collect();
    Ok(ImageGrads {
        grads,
        focal: focal_value,
        offset_sum,
    })
}

/// Trains from a fresh initialization; see [`train_with`].
pub fn train(config: &TrainConfig, dataset: &[Sample]) -> Result<Checkpoint> {
    train_with(config, dataset, |_| {})
}

/// Adam over shuffled mini-batches. Each image is its own graph; the
/// per-image gradients of a batch are summed in batch order, so results do
/// not depend on thread count. `on_epoch` sees every finished epoch.
pub fn train_with(config: &TrainConfig, dataset: &[Sample], mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Checkpoint> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(PlcError::invalid("training dataset is empty"));
    }
    let prepared: Vec<Prepared> = dataset
        .par_iter()
        .map(|s| prepare(s, config, true))
        .collect::<Result<_>>()?;

    let mut ckpt = Checkpoint::initial(config);
    let mut adam = {
        let tensors: Vec<&Tensor<f32>> = ckpt.params.named_tensors().into_iter().map(|(_, t)| t).collect();
        AdamState::new(&tensors, AdamConfig::default())
    };
    let names: Vec<String> = ckpt.params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_0a7a);

    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut seg_total, mut offset_total, mut batches) = (0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let points: usize = batch.iter().map(|&i| prepared[i].lanes.len() * config.m).sum();
            let seg_scale = config.seg_loss_weight / batch.len() as f64;
            let offset_scale = if points > 0 {
                config.offset_loss_weight / points as f64
            } else {
                0.0
            };
            let parts: Vec<ImageGrads> = batch
                .par_iter()
                .map(|&i| image_grads(&ckpt.params, &prepared[i], config, seg_scale, offset_scale))
                .collect::<Result<_>>()?;

            let mut sum = parts[0].grads.clone();
            for part in &parts[1..] {
                for (acc, g) in sum.iter_mut().zip(&part.grads) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            let grad_refs: Vec<&[f32]> = sum.iter().map(Vec::as_slice).collect();
            let mut tensors: Vec<&mut Tensor<f32>> =
                ckpt.params.named_tensors_mut().into_iter().map(|(_, t)| t).collect();
            let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
            adam.step(&mut tensors, &grad_refs, &name_refs, lr)?;

            seg_total += parts.iter().map(|p| p.focal).sum::<f64>() / parts.len() as f64;
            if points > 0 {
                offset_total += parts.iter().map(|p| p.offset_sum).sum::<f64>() / points as f64;
            }
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            seg_loss: seg_total / batches as f64,
            offset_loss: offset_total / batches as f64,
            lr,
        };
        if !(record.seg_loss.is_finite() && record.offset_loss.is_finite()) {
            return Err(PlcError::invalid(format!("epoch {epoch}: non-finite loss")));
        }
        log::info!(
            "epoch {epoch}: seg {:.6} offset {:.6} lr {lr}",
            record.seg_loss,
            record.offset_loss
        );
        on_epoch(&record);
        ckpt.history.push(record);
        ckpt.epoch = epoch;
    }
    Ok(ckpt)
}

/// Corrected lanes at net scale, `M` points each, one per initial lane.
pub fn correct_net(ckpt: &Checkpoint, sample: &Sample) -> Result<(Prepared, Vec<LaneInstance>)> {
    let prepared = prepare(sample, &ckpt.config, false)?;
    let initial: Vec<LaneInstance> = prepared
        .lanes
        .iter()
        .map(|l| LaneInstance::new(l.track_id, LaneRole::Initial, l.initial.clone()))
        .collect();
    let out = forward(&prepared.image, &initial, &ckpt.params)?;
    Ok((prepared, out.corrected))
}

/// Corrected lanes in the sample's original pixel frame.
pub fn correct(ckpt: &Checkpoint, sample: &Sample) -> Result<Vec<LaneInstance>> {
    let (prepared, lanes) = correct_net(ckpt, sample)?;
    Ok(lanes
        .into_iter()
        .map(|l| LaneInstance {
            points: l.points.iter().map(|&p| prepared.scale.to_orig(p)).collect(),
            ..l
        })
        .collect())
}
