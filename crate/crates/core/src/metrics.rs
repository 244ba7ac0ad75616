//! Lane correction metrics, averaged per lane instance.
//!
//! * point-level smooth-L1 and L2 between index-aligned points,
//! * lane-IoU of rasterized masks dilated by K ∈ {1, 2, 3} pixels,
//! * mean bidirectional Chamfer distance.

use serde::{Deserialize, Serialize};

use crate::error::{PlcError, Result};
use crate::lane::{distance, Point};
use crate::raster::{lanes_mask, BinaryMap};

pub const IOU_RADII: [usize; 3] = [1, 2, 3];

/// Smooth-L1 of a residual vector, branching on its L1 norm `s`:
/// `0.5·s²` if `s < 1`, else `s - 0.5`.
pub fn smooth_l1(d: Point) -> f64 {
    let s = d[0].abs() + d[1].abs();
    if s < 1.0 {
        0.5 * s * s
    } else {
        s - 0.5
    }
}

/// Per-lane mean smooth-L1 and mean L2 over index-aligned point pairs.
pub fn point_distances(corrected: &[Point], gt: &[Point]) -> Result<(f64, f64)> {
    if corrected.len() != gt.len() {
        return Err(PlcError::invalid(format!(
            "point-level metrics need equal point counts, got {} and {}",
            corrected.len(),
            gt.len()
        )));
    }
    if corrected.is_empty() {
        return Err(PlcError::invalid("point-level metrics on an empty lane"));
    }
    let n = corrected.len() as f64;
    let (mut sl1, mut l2) = (0.0, 0.0);
    for (a, b) in corrected.iter().zip(gt) {
        let d = [a[0] - b[0], a[1] - b[1]];
        sl1 += smooth_l1(d);
        l2 += d[0].hypot(d[1]);
    }
    Ok((sl1 / n, l2 / n))
}

fn check_radius(k: usize) -> Result<()> {
    if IOU_RADII.contains(&k) {
        Ok(())
    } else {
        Err(PlcError::invalid(format!("lane-IoU extension {k} not in {{1, 2, 3}}")))
    }
}

/// Intersection over union of the two masks; two empty masks agree fully.
pub fn mask_iou(a: &BinaryMap, b: &BinaryMap) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x != 0, y != 0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU of the two lanes' masks on an `height × width` canvas, each lane
/// rasterized and dilated by `k` pixels (Chebyshev).
pub fn lane_iou(corrected: &[Point], gt: &[Point], k: usize, height: usize, width: usize) -> Result<f64> {
    check_radius(k)?;
    let a = lanes_mask([corrected], height, width, k);
    let b = lanes_mask([gt], height, width, k);
    Ok(mask_iou(&a, &b))
}

fn directed_chamfer(from: &[Point], to: &[Point]) -> f64 {
    from.iter()
        .map(|&p| to.iter().map(|&q| distance(p, q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// Mean of the two directed mean-nearest-neighbor distances.
pub fn chamfer(corrected: &[Point], gt: &[Point]) -> Result<f64> {
    if corrected.is_empty() || gt.is_empty() {
        return Err(PlcError::invalid("Chamfer distance of an empty lane"));
    }
    Ok(0.5 * (directed_chamfer(corrected, gt) + directed_chamfer(gt, corrected)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "p")]
    Pixel,
    #[serde(rename = "m")]
    Meter,
}

impl Unit {
    pub fn tag(self) -> &'static str {
        match self {
            Unit::Pixel => "p",
            Unit::Meter => "m",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub track_id: u32,
    pub smooth_l1: f64,
    pub l2: f64,
    pub chamfer: f64,
    /// IoU at 1, 2, 3 px extension; pixel mode only.
    pub lane_iou: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub unit: Unit,
    pub instance_count: usize,
    pub smooth_l1: f64,
    pub l2: f64,
    pub chamfer: f64,
    pub lane_iou: Option<[f64; 3]>,
    /// `[height, width]` of the raster canvas used for lane-IoU.
    pub canvas: Option<[usize; 2]>,
    pub instances: Vec<InstanceMetrics>,
}

/// One corrected lane paired with its ground truth (index-aligned points).
#[derive(Debug, Clone, Copy)]
pub struct LanePair<'a> {
    pub track_id: u32,
    pub corrected: &'a [Point],
    pub gt: &'a [Point],
    /// Canvas `(height, width)` for lane-IoU in pixel mode. Pairs from
    /// different images may sit on different canvases.
    pub canvas: Option<(usize, usize)>,
}

/// Per-instance metrics and their arithmetic means.
pub fn evaluate(pairs: &[LanePair<'_>], unit: Unit) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(PlcError::invalid("no lane pairs to evaluate"));
    }
    let mut instances = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (sl1, l2) = point_distances(pair.corrected, pair.gt)?;
        let cd = chamfer(pair.corrected, pair.gt)?;
        let lane_iou = match (unit, pair.canvas) {
            (Unit::Pixel, Some((h, w))) => {
                let mut ious = [0.0; 3];
                for (slot, &k) in ious.iter_mut().zip(&IOU_RADII) {
                    *slot = lane_iou(pair.corrected, pair.gt, k, h, w)?;
                }
                Some(ious)
            }
            (Unit::Pixel, None) => {
                return Err(PlcError::invalid("pixel-mode evaluation needs a canvas size"));
            }
            (Unit::Meter, _) => None,
        };
        instances.push(InstanceMetrics {
            track_id: pair.track_id,
            smooth_l1: sl1,
            l2,
            chamfer: cd,
            lane_iou,
        });
    }
    let n = instances.len() as f64;
    let mean = |f: &dyn Fn(&InstanceMetrics) -> f64| instances.iter().map(f).sum::<f64>() / n;
    let lane_iou = (unit == Unit::Pixel).then(|| {
        std::array::from_fn(|k| mean(&|m: &InstanceMetrics| m.lane_iou.expect("pixel mode")[k]))
    });
    let mut canvases: Vec<[usize; 2]> = pairs.iter().filter_map(|p| p.canvas.map(|(h, w)| [h, w])).collect();
    canvases.dedup();
    Ok(MetricsReport {
        unit,
        instance_count: instances.len(),
        smooth_l1: mean(&|m| m.smooth_l1),
        l2: mean(&|m| m.l2),
        chamfer: mean(&|m| m.chamfer),
        lane_iou,
        canvas: if unit == Unit::Pixel && canvases.len() == 1 { Some(canvases[0]) } else { None },
        instances,
    })
}

/// Table rows labelled e.g. "initial" / "corrected", in display order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<(String, MetricsReport)>,
}

impl ReportTable {
    /// Fixed-width text table: one line per row.
    pub fn render(&self) -> String {
        let mut out = String::from(
            "row          unit  smooth-L1      L2             CD             IoU@1    IoU@2    IoU@3    instances\n",
        );
        for (label, r) in &self.rows {
            let iou = |k: usize| r.lane_iou.map_or("-".to_string(), |v| format!("{:.4}", v[k]));
            out.push_str(&format!(
                "{label:<12} {:<5} {:<14.6} {:<14.6} {:<14.6} {:<8} {:<8} {:<8} {}\n",
                r.unit.tag(),
                r.smooth_l1,
                r.l2,
                r.chamfer,
                iou(0),
                iou(1),
                iou(2),
                r.instance_count
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_distance_examples() {
        let a = [[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(point_distances(&a, &a).unwrap(), (0.0, 0.0));
        assert_eq!(point_distances(&[[3.0, 4.0]], &[[0.0, 0.0]]).unwrap(), (6.5, 5.0));
        assert_eq!(point_distances(&[[0.5, 0.0]], &[[0.0, 0.0]]).unwrap(), (0.125, 0.5));
        assert!(point_distances(&a, &a[..1]).is_err());
    }

    #[test]
    fn smooth_l1_continuous_at_branch() {
        let below = smooth_l1([1.0 - 1e-12, 0.0]);
        let at = smooth_l1([1.0, 0.0]);
        assert!((below - 0.5).abs() < 1e-9 && (at - 0.5).abs() < 1e-12);
    }

    #[test]
    fn iou_examples() {
        let lane: Vec<Point> = (0..10).map(|i| [5.0 + i as f64, 10.0]).collect();
        for k in 1..=3 {
            assert_eq!(lane_iou(&lane, &lane, k, 32, 32).unwrap(), 1.0);
        }
        let far: Vec<Point> = lane.iter().map(|p| [p[0], p[1] + 8.0]).collect();
        for k in 1..=3 {
            assert_eq!(lane_iou(&lane, &far, k, 32, 32).unwrap(), 0.0);
        }
        assert!(lane_iou(&lane, &lane, 0, 32, 32).is_err());
        assert!(lane_iou(&lane, &lane, 4, 32, 32).is_err());
    }

    #[test]
    fn iou_off_canvas_lanes_agree() {
        let a = [[-10.0, -10.0], [-5.0, -10.0]];
        let b = [[-10.0, -20.0], [-5.0, -20.0]];
        assert_eq!(lane_iou(&a, &b, 1, 8, 8).unwrap(), 1.0);
    }

    #[test]
    fn chamfer_examples() {
        let a: Vec<Point> = (0..20).map(|i| [i as f64, 0.0]).collect();
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let b: Vec<Point> = a.iter().map(|p| [p[0], 0.75]).collect();
        assert!((chamfer(&a, &b).unwrap() - 0.75).abs() < 1e-12);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn evaluate_means() {
        let a: Vec<Point> = (0..4).map(|i| [i as f64 * 4.0, 0.0]).collect();
        let b1: Vec<Point> = a.iter().map(|p| [p[0], 1.0]).collect();
        let b3: Vec<Point> = a.iter().map(|p| [p[0], 3.0]).collect();
        let pairs = [
            LanePair { track_id: 1, corrected: &a, gt: &b1, canvas: None },
            LanePair { track_id: 2, corrected: &a, gt: &b3, canvas: None },
        ];
        let r = evaluate(&pairs, Unit::Meter).unwrap();
        assert!((r.chamfer - 2.0).abs() < 1e-12);
        assert_eq!(r.instance_count, 2);
        assert!(r.lane_iou.is_none());
        assert!(evaluate(&[], Unit::Meter).is_err());
    }

    #[test]
    fn evaluate_identical_pixel_pairs() {
        let a: Vec<Point> = (0..6).map(|i| [3.0, 2.0 + 3.0 * i as f64]).collect();
        let pairs = [LanePair { track_id: 7, corrected: &a, gt: &a, canvas: Some((24, 12)) }];
        let r = evaluate(&pairs, Unit::Pixel).unwrap();
        assert_eq!((r.smooth_l1, r.l2, r.chamfer), (0.0, 0.0, 0.0));
        assert_eq!(r.lane_iou, Some([1.0; 3]));
        assert_eq!(r.canvas, Some([24, 12]));
    }
}
