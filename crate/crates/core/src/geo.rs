//! Image ↔ absolute coordinates, and merging local lanes into global lanes.
//!
//! Image `y` grows downward, geographic `Y` upward; the image's left-bottom
//! corner `(0, H)` sits at the anchor `(X_lb, Y_lb)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PlcError, Result};
use crate::lane::{distance, LaneInstance, Point};

/// Points per global lane.
pub const GLOBAL_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionAnchor {
    pub x_lb: f64,
    pub y_lb: f64,
    pub height: usize,
    pub width: usize,
    /// Meters per pixel.
    pub resolution: f64,
    pub region_index: u32,
}

impl RegionAnchor {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) || self.height == 0 || self.width == 0 {
            return Err(PlcError::invalid(format!(
                "region anchor needs R > 0 and H, W > 0 (R = {}, {}x{})",
                self.resolution, self.height, self.width
            )));
        }
        Ok(())
    }
}

pub fn image_to_geo(p: Point, anchor: &RegionAnchor) -> Point {
    [
        anchor.x_lb + p[0] * anchor.resolution,
        anchor.y_lb + (anchor.height as f64 - p[1]) * anchor.resolution,
    ]
}

pub fn geo_to_image(p: Point, anchor: &RegionAnchor) -> Point {
    [
        (p[0] - anchor.x_lb) / anchor.resolution,
        anchor.height as f64 - (p[1] - anchor.y_lb) / anchor.resolution,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalLane {
    pub track_id: u32,
    /// Exactly [`GLOBAL_POINTS`] `[X, Y]` pairs in meters.
    pub points: Vec<Point>,
}

/// Drops every point closer than `min_gap` to the last kept point.
fn drop_near_duplicates(points: &[Point], min_gap: f64) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for &p in points {
        match out.last() {
            Some(&q) if p == q || distance(p, q) < min_gap => {}
            _ => out.push(p),
        }
    }
    out
}

/// Position along a polyline: segment index plus fraction within it.
#[derive(Clone, Copy)]
struct Cursor {
    seg: usize,
    t: f64,
}

fn at(points: &[Point], c: Cursor) -> Point {
    let (a, b) = (points[c.seg], points[c.seg + 1]);
    [a[0] + c.t * (b[0] - a[0]), a[1] + c.t * (b[1] - a[1])]
}

/// First point after `from` (walking forward) at distance `chord` from
/// `at(from)`, or `None` if the polyline ends inside that circle.
///
/// Squared distance to the center is convex along each segment, so the walk
/// leaves the circle within the first segment whose far end is outside.
fn next_on_circle(points: &[Point], from: Cursor, chord: f64) -> Option<Cursor> {
    let q = at(points, from);
    let r2 = chord * chord;
    for seg in from.seg..points.len() - 1 {
        let b = points[seg + 1];
        if (b[0] - q[0]).powi(2) + (b[1] - q[1]).powi(2) < r2 {
            continue;
        }
        let a = points[seg];
        let d = [b[0] - a[0], b[1] - a[1]];
        let w = [a[0] - q[0], a[1] - q[1]];
        let dd = d[0] * d[0] + d[1] * d[1];
        let wd = w[0] * d[0] + w[1] * d[1];
        let ww = w[0] * w[0] + w[1] * w[1];
        let disc = (wd * wd - dd * (ww - r2)).max(0.0);
        let t = ((-wd + disc.sqrt()) / dd).clamp(0.0, 1.0);
        let t = if seg == from.seg { t.max(from.t) } else { t };
        return Some(Cursor { seg, t });
    }
    None
}

/// Walks `steps` equal chords; `None` if the polyline runs out first.
fn walk(points: &[Point], chord: f64, steps: usize) -> Option<Vec<Cursor>> {
    let mut cur = Cursor { seg: 0, t: 0.0 };
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        cur = next_on_circle(points, cur, chord)?;
        out.push(cur);
    }
    Some(out)
}

/// Resamples a polyline to `n` points along it with equal straight-line
/// spacing between consecutive outputs, keeping both endpoints.
///
/// On a straight polyline this is plain even-arclength interpolation. Equal
/// chords (rather than equal arclength on the input) make the output a fixed
/// point: resampling it again returns the same points.
pub fn resample_equal_chords(points: &[Point], n: usize) -> Result<Vec<Point>> {
    if n < 2 {
        return Err(PlcError::invalid(format!("cannot resample to {n} points")));
    }
    let points: Vec<Point> = drop_near_duplicates(points, 0.0);
    let length: f64 = points.windows(2).map(|w| distance(w[0], w[1])).sum();
    if points.len() < 2 || !(length > 0.0) || !length.is_finite() {
        return Err(PlcError::invalid("polyline has zero length"));
    }
    let steps = n - 1;
    let start = points[0];
    let end = *points.last().expect("non-empty");

    // The largest chord that still fits `steps` steps lands the last step on
    // the end point. Chords never exceed arclength, so `length / steps` is an
    // upper bound.
    let (mut lo, mut hi) = (0.0, length / steps as f64 * (1.0 + 1e-12));
    if walk(&points, hi, steps).is_some() {
        lo = hi;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if walk(&points, mid, steps).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let cursors = if lo > 0.0 { walk(&points, lo, steps - 1) } else { None };
    let Some(cursors) = cursors else {
        return Err(PlcError::invalid("polyline could not be resampled"));
    };
    let mut out = Vec::with_capacity(n);
    out.push(start);
    out.extend(cursors.into_iter().map(|c| at(&points, c)));
    out.push(end);
    Ok(out)
}

/// Applies the global-lane smoothing to absolute-coordinate polylines:
/// near-duplicate removal at `min_gap`, then 100-point resampling. Lanes with
/// zero length are skipped with a warning.
pub fn smooth_reference(lanes: &[(u32, Vec<Point>)], min_gap: f64) -> Vec<GlobalLane> {
    let mut out = Vec::with_capacity(lanes.len());
    for (track_id, points) in lanes {
        let kept = drop_near_duplicates(points, min_gap);
        match resample_equal_chords(&kept, GLOBAL_POINTS) {
            Ok(points) => out.push(GlobalLane {
                track_id: *track_id,
                points,
            }),
            Err(e) => log::warn!("track {track_id}: skipped ({e})"),
        }
    }
    out
}

/// Groups local lanes by track id, orders each group's fragments by region
/// index, converts them to absolute coordinates, concatenates, and smooths to
/// 100 points. Output is sorted by track id.
pub fn merge_global(fragments: &[(LaneInstance, RegionAnchor)]) -> Vec<GlobalLane> {
    let mut groups: BTreeMap<u32, Vec<&(LaneInstance, RegionAnchor)>> = BTreeMap::new();
    for f in fragments {
        groups.entry(f.0.track_id).or_default().push(f);
    }
    let mut merged = Vec::with_capacity(groups.len());
    for (track_id, mut group) in groups {
        // stable order even when one region holds two fragments of a track
        group.sort_by(|a, b| {
            a.1.region_index
                .cmp(&b.1.region_index)
                .then_with(|| a.0.points.len().cmp(&b.0.points.len()))
                .then_with(|| a.0.points.partial_cmp(&b.0.points).unwrap_or(std::cmp::Ordering::Equal))
        });
        let mut points = Vec::new();
        let mut gap = f64::INFINITY;
        for (lane, anchor) in group {
            gap = gap.min(anchor.resolution / 2.0);
            points.extend(lane.points.iter().map(|&p| image_to_geo(p, anchor)));
        }
        merged.push((track_id, points, gap));
    }
    merged
        .into_iter()
        .flat_map(|(id, points, gap)| smooth_reference(&[(id, points)], gap))
        .collect()
}
