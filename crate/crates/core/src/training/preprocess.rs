//! Resizing samples to the network input size.
//!
//! Net pixel `i` is centered on original coordinate `i · scale` so lane
//! coordinates convert by a plain multiplication in both directions.

use image::RgbImage;
use plc_autodiff::Tensor;

use super::config::TrainConfig;
use super::resample::resample_lane;
use crate::error::{PlcError, Result};
use crate::lane::{LaneInstance, OffsetField, Point};
use crate::raster::BinaryMap;
use crate::sample::Sample;

/// Multipliers taking original pixel coordinates to net coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetScale {
    pub sx: f64,
    pub sy: f64,
}

impl NetScale {
    pub fn new(orig_h: usize, orig_w: usize, net_h: usize, net_w: usize) -> Self {
        Self {
            sx: net_w as f64 / orig_w as f64,
            sy: net_h as f64 / orig_h as f64,
        }
    }

    pub fn to_net(&self, p: Point) -> Point {
        [p[0] * self.sx, p[1] * self.sy]
    }

    pub fn to_orig(&self, p: Point) -> Point {
        [p[0] / self.sx, p[1] / self.sy]
    }
}

/// Taps and weights of a tent filter mapping `dst` samples onto `src`.
fn filter_taps(src_len: usize, dst_len: usize) -> Vec<Vec<(usize, f32)>> {
    let step = src_len as f64 / dst_len as f64;
    let support = step.max(1.0);
    (0..dst_len)
        .map(|i| {
            let center = i as f64 * step;
            let lo = (center - support).ceil().max(0.0) as usize;
            let hi = ((center + support).floor() as usize).min(src_len - 1);
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| (j, 1.0 - (j as f64 - center).abs() / support))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            if taps.is_empty() {
                taps.push((center.round().clamp(0.0, (src_len - 1) as f64) as usize, 1.0));
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.into_iter().map(|(j, w)| (j, (w / total) as f32)).collect()
        })
        .collect()
}

/// Antialiased resize of a `[C, H, W]` planar buffer.
pub fn resize_planes(data: &[f32], channels: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let cols = filter_taps(w, out_w);
    let rows = filter_taps(h, out_h);
    let mut tmp = vec![0.0f32; channels * h * out_w];
    for c in 0..channels {
        for y in 0..h {
            let src = &data[(c * h + y) * w..(c * h + y + 1) * w];
            let dst = &mut tmp[(c * h + y) * out_w..(c * h + y + 1) * out_w];
            for (d, taps) in dst.iter_mut().zip(&cols) {
                *d = taps.iter().map(|&(j, wt)| src[j] * wt).sum();
            }
        }
    }
    let mut out = vec![0.0f32; channels * out_h * out_w];
    for c in 0..channels {
        for (y, taps) in rows.iter().enumerate() {
            let dst = &mut out[(c * out_h + y) * out_w..(c * out_h + y + 1) * out_w];
            for &(j, wt) in taps {
                let src = &tmp[(c * h + j) * out_w..(c * h + j + 1) * out_w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s * wt;
                }
            }
        }
    }
    out
}

/// RGB image as a `[3, H, W]` tensor scaled to `[0, 1]`, resized to the net.
pub fn image_tensor(image: &RgbImage, net_h: usize, net_w: usize) -> Tensor<f32> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut planes = vec![0.0f32; 3 * h * w];
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            planes[c * h * w + i] = px.0[c] as f32 / 255.0;
        }
    }
    let data = if (h, w) == (net_h, net_w) {
        planes
    } else {
        resize_planes(&planes, 3, h, w, net_h, net_w)
    };
    Tensor::new(vec![3, net_h, net_w], data).expect("sizes match")
}

/// A net pixel is positive when any original pixel within half a net pixel
/// of its center is.
pub fn resize_label(label: &BinaryMap, net_h: usize, net_w: usize) -> BinaryMap {
    if (label.height, label.width) == (net_h, net_w) {
        return label.clone();
    }
    let span = |len: usize, net: usize, i: usize| {
        let step = len as f64 / net as f64;
        let half = (step / 2.0).max(0.5);
        let c = i as f64 * step;
        let lo = (c - half).ceil().max(0.0) as usize;
        let hi = ((c + half).floor() as usize).min(len - 1);
        lo..=hi.max(lo)
    };
    let mut out = BinaryMap::new(net_h, net_w);
    for y in 0..net_h {
        for x in 0..net_w {
            let hit = span(label.height, net_h, y).any(|yy| span(label.width, net_w, x).any(|xx| label.get(xx, yy)));
            if hit {
                out.mark(x as i64, y as i64);
            }
        }
    }
    out
}

/// Lane resampled to `m` points at net scale.
pub fn net_lane(lane: &LaneInstance, scale: NetScale, m: usize) -> Result<Vec<Point>> {
    let scaled: Vec<Point> = lane.points.iter().map(|&p| scale.to_net(p)).collect();
    resample_lane(&scaled, m)
}

#[derive(Debug, Clone)]
pub struct PreparedLane {
    pub track_id: u32,
    /// `m` points at net scale.
    pub initial: Vec<Point>,
    /// GT minus initial, point by point, at net scale.
    pub target: Option<OffsetField>,
}

/// A sample ready for the network.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub image_id: String,
    pub image: Tensor<f32>,
    pub label: Vec<bool>,
    pub scale: NetScale,
    pub lanes: Vec<PreparedLane>,
}

/// Resizes the image and label and resamples lanes at net scale. With
/// `need_targets`, lanes lacking a GT partner are dropped (and GT lanes
/// lacking an initial partner are ignored), each with a warning.
pub fn prepare(sample: &Sample, config: &TrainConfig, need_targets: bool) -> Result<Prepared> {
    let (net_h, net_w) = (config.net_height, config.net_width);
    if net_h % 16 != 0 || net_w % 16 != 0 || net_h == 0 || net_w == 0 {
        return Err(PlcError::invalid(format!("net size {net_h}x{net_w} is not divisible by 16")));
    }
    let scale = NetScale::new(sample.height(), sample.width(), net_h, net_w);
    let mut lanes = Vec::with_capacity(sample.initial.len());
    for lane in &sample.initial {
        let initial = net_lane(lane, scale, config.m)?;
        let target = match sample.gt_for(lane.track_id) {
            Some(gt) => Some(OffsetField::between(&initial, &net_lane(gt, scale, config.m)?)),
            None if need_targets => {
                log::warn!("{}: initial track {} has no ground truth; skipped", sample.image_id, lane.track_id);
                continue;
            }
            None => None,
        };
        lanes.push(PreparedLane {
            track_id: lane.track_id,
            initial,
            target,
        });
    }
    if need_targets {
        for gt in &sample.gt {
            if !sample.initial.iter().any(|l| l.track_id == gt.track_id) {
                log::warn!("{}: ground-truth track {} has no initial lane; skipped", sample.image_id, gt.track_id);
            }
        }
    }
    let label = resize_label(&sample.label, net_h, net_w);
    Ok(Prepared {
        image_id: sample.image_id.clone(),
        image: image_tensor(&sample.image, net_h, net_w),
        label: label.data.iter().map(|&v| v != 0).collect(),
        scale,
        lanes,
    })
}
