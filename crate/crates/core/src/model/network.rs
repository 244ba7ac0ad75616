//! Graph-level building blocks of the lane correction network.

use plc_autodiff::{Graph, PoolMode, Scalar, Var};

use super::params::{BoundLayer, Layers, FEATURE_CHANNELS};
use crate::error::{PlcError, Result};
use crate::lane::Point;

/// Down-sampling backbone producing four feature maps at strides 2, 4, 8, 16.
pub trait Backbone<T: Scalar> {
    fn stages(&self, g: &mut Graph<T>, image: Var) -> Result<[Var; 4]>;
}

/// Four stages of `[3×3 stride-2 conv → ReLU → 3×3 conv → ReLU]`.
pub struct ConvBackbone<'a> {
    pub stages: &'a [[BoundLayer; 2]; 4],
}

impl<T: Scalar> Backbone<T> for ConvBackbone<'_> {
    fn stages(&self, g: &mut Graph<T>, image: Var) -> Result<[Var; 4]> {
        let mut x = image;
        let mut outs = [image; 4];
        for (s, [down, refine]) in self.stages.iter().enumerate() {
            x = conv2d_layer(g, x, down, 2, 1)?;
            x = g.relu(x);
            x = conv2d_layer(g, x, refine, 1, 1)?;
            x = g.relu(x);
            outs[s] = x;
        }
        Ok(outs)
    }
}

pub fn conv2d_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layer: &BoundLayer,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let y = g.conv2d(x, layer.weight, stride, padding)?;
    Ok(g.add_channel_bias(y, layer.bias)?)
}

pub fn conv1d_layer<T: Scalar>(g: &mut Graph<T>, x: Var, layer: &BoundLayer, padding: usize) -> Result<Var> {
    let y = g.conv1d(x, layer.weight, padding)?;
    Ok(g.add_channel_bias(y, layer.bias)?)
}

/// Image `[3, H, W]` → (features `[4, H, W]`, segmentation logits `[1, H, W]`).
///
/// Stages 2..=4 are up-sampled back to `H×W`, stacked, and reduced to one
/// logit channel by a 1×1 conv. The returned features are the input image
/// with the segmentation probability appended as a fourth channel. Stage 1
/// only feeds stage 2.
pub fn extract_multiscale_features<T: Scalar>(
    g: &mut Graph<T>,
    backbone: &impl Backbone<T>,
    seg_head: &BoundLayer,
    image: Var,
) -> Result<(Var, Var)> {
    let &[c, h, w] = g.shape(image) else {
        return Err(PlcError::invalid(format!("image shape {:?}, expected [3, H, W]", g.shape(image))));
    };
    if c != 3 {
        return Err(PlcError::invalid(format!("image has {c} channels, expected 3")));
    }
    if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
        return Err(PlcError::invalid(format!("image size {h}x{w} is not divisible by 16")));
    }
    let stages = backbone.stages(g, image)?;
    let mut pyramid = Vec::with_capacity(3);
    for (s, &stage) in stages.iter().enumerate().skip(1) {
        let factor = 1 << (s + 1);
        let up = g.upsample_bilinear(stage, factor)?;
        debug_assert_eq!(&g.shape(up)[1..], &[h, w]);
        pyramid.push(up);
    }
    let stacked = g.concat(&pyramid)?;
    let seg_logits = conv2d_layer(g, stacked, seg_head, 1, 0)?;
    let seg_prob = g.sigmoid(seg_logits);
    let features = g.concat(&[image, seg_prob])?;
    Ok((features, seg_logits))
}

/// Integer grid offsets `i - P/2` for `i in 0..P`: a point sitting on a pixel
/// center samples exact pixel values.
pub fn patch_offsets(patch_size: usize) -> Vec<f64> {
    let half = (patch_size / 2) as f64;
    (0..patch_size).map(|i| i as f64 - half).collect()
}

/// Sample locations for one lane, ordered point-major, then grid row, then
/// grid column; coordinates are clamped into the map.
pub fn patch_sample_points(points: &[Point], patch_size: usize, height: usize, width: usize) -> Vec<(f64, f64)> {
    let offsets = patch_offsets(patch_size);
    let (max_x, max_y) = ((width - 1) as f64, (height - 1) as f64);
    let mut out = Vec::with_capacity(points.len() * patch_size * patch_size);
    for p in points {
        for &dy in &offsets {
            for &dx in &offsets {
                out.push(((p[0] + dx).clamp(0.0, max_x), (p[1] + dy).clamp(0.0, max_y)));
            }
        }
    }
    out
}

/// Patch descriptors `[K, M]` for a lane of M points, K = P·P·C.
///
/// Column `m` holds the bilinear samples of the P×P grid around point `m`,
/// flattened grid-row-major with channels fastest.
pub fn crop_patch_features<T: Scalar>(
    g: &mut Graph<T>,
    features: Var,
    points: &[Point],
    patch_size: usize,
) -> Result<Var> {
    if points.is_empty() {
        return Err(PlcError::invalid("cannot crop patches for a lane with no points"));
    }
    if patch_size < 2 {
        return Err(PlcError::invalid(format!("patch size {patch_size} < 2")));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(PlcError::invalid("lane point is not finite"));
    }
    let &[c, h, w] = g.shape(features) else {
        return Err(PlcError::invalid(format!("features shape {:?}", g.shape(features))));
    };
    let samples = patch_sample_points(points, patch_size, h, w);
    let rows = g.bilinear_gather(features, &samples)?;
    let k = patch_size * patch_size * c;
    let per_point = g.reshape(rows, vec![points.len(), k])?;
    Ok(g.transpose(per_point)?)
}

/// Channel attention over patch descriptors: max- and mean-pool over the M
/// points, a k=3 1D conv across the K descriptor entries, and a sigmoid give
/// one weight per row of `t`.
pub fn lane_attention<T: Scalar>(g: &mut Graph<T>, t: Var, attention: &BoundLayer) -> Result<Var> {
    let k = g.shape(t)[0];
    let max = g.pool_over_positions(t, PoolMode::Max)?;
    let mean = g.pool_over_positions(t, PoolMode::Mean)?;
    let max = g.reshape(max, vec![1, k])?;
    let mean = g.reshape(mean, vec![1, k])?;
    let pooled = g.concat(&[max, mean])?;
    let logits = conv1d_layer(g, pooled, attention, 1)?;
    let weights = g.sigmoid(logits);
    Ok(g.scale_rows(t, weights)?)
}

/// Five pointwise 1D convs with ReLU between them; `[K, M]` → `[2, M]`
/// (Δx row, Δy row). No activation after the last layer.
pub fn correction_mlp<T: Scalar>(g: &mut Graph<T>, a: Var, mlp: &[BoundLayer; 5]) -> Result<Var> {
    let mut x = a;
    for (i, layer) in mlp.iter().enumerate() {
        x = conv1d_layer(g, x, layer, 0)?;
        if i + 1 < mlp.len() {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Graph handles produced by one forward pass.
pub struct ForwardVars {
    pub features: Var,
    pub seg_logits: Var,
    /// `[2, M]` offsets per input lane.
    pub offsets: Vec<Var>,
}

/// Full forward pass on a graph: shared features, then per-lane patch
/// cropping, attention and offset regression. Lanes do not interact.
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    layers: &Layers<BoundLayer>,
    image: Var,
    lanes: &[&[Point]],
    patch_size: usize,
) -> Result<ForwardVars> {
    let backbone = ConvBackbone {
        stages: &layers.backbone,
    };
    let (features, seg_logits) = extract_multiscale_features(g, &backbone, &layers.seg_head, image)?;
    debug_assert_eq!(g.shape(features)[0], FEATURE_CHANNELS);
    let mut offsets = Vec::with_capacity(lanes.len());
    for points in lanes {
        let t = crop_patch_features(g, features, points, patch_size)?;
        let a = lane_attention(g, t, &layers.attention)?;
        offsets.push(correction_mlp(g, a, &layers.mlp)?);
    }
    Ok(ForwardVars {
        features,
        seg_logits,
        offsets,
    })
}
