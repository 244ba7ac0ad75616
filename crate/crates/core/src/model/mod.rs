//! The lane correction network: multi-scale features with a segmentation
//! head, per-point patch descriptors, lane attention and an offset MLP.

pub mod checkpoint;
pub mod network;
mod params;

pub use params::{
    bound_vars, layer_shapes, BoundLayer, ConvLayer, Layers, ModelConfig, ModelParams, FEATURE_CHANNELS,
    PARAMS_VERSION,
};

use plc_autodiff::{Graph, Scalar, Tensor};

use crate::error::Result;
use crate::lane::{LaneInstance, LaneRole, OffsetField, Point};

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// Initial lanes plus predicted offsets, same order and track ids.
    pub corrected: Vec<LaneInstance>,
    pub seg_logits: Tensor<T>,
    pub offsets: Vec<OffsetField>,
}

/// Runs the network on one image `[3, H, W]` and its initial lanes (already
/// resampled, in the image's pixel frame).
pub fn forward<T: Scalar>(
    image: &Tensor<T>,
    initial: &[LaneInstance],
    params: &ModelParams<T>,
) -> Result<ForwardOutput<T>> {
    let config = params.infer_config()?;
    let mut g = Graph::new();
    let layers = params.bind(&mut g);
    let image_var = g.constant(image.clone());
    let lanes: Vec<&[Point]> = initial.iter().map(|l| l.points.as_slice()).collect();
    let vars = network::forward_graph(&mut g, &layers, image_var, &lanes, config.patch_size)?;

    let mut corrected = Vec::with_capacity(initial.len());
    let mut offsets = Vec::with_capacity(initial.len());
    for (lane, &ov) in initial.iter().zip(&vars.offsets) {
        let rows: Vec<f64> = g.value(ov).data().iter().map(|v| v.to_f64_lossy()).collect();
        let field = OffsetField::from_rows(&rows);
        corrected.push(apply_offsets(lane, &field));
        offsets.push(field);
    }
    Ok(ForwardOutput {
        corrected,
        seg_logits: g.value(vars.seg_logits).clone(),
        offsets,
    })
}

/// `initial + offsets`, tagged as a corrected lane.
pub fn apply_offsets(initial: &LaneInstance, offsets: &OffsetField) -> LaneInstance {
    LaneInstance {
        track_id: initial.track_id,
        role: LaneRole::Corrected,
        points: initial
            .points
            .iter()
            .zip(&offsets.offsets)
            .map(|(p, o)| [p[0] + o[0], p[1] + o[1]])
            .collect(),
    }
}
