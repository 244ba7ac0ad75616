//! Synthetic worlds: a winding trajectory with parallel lanes, and the
//! regions sampled along it.

use rand::Rng;

use crate::error::{PlcError, Result};
use crate::geo::{geo_to_image, RegionAnchor};
use crate::lane::{distance, Point};

/// Spacing of the dense world polylines, meters.
pub const WORLD_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldLane {
    pub track_id: u32,
    /// Absolute `[X, Y]` meters, ordered along the trajectory.
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub trajectory: Vec<Point>,
    pub lanes: Vec<WorldLane>,
}

/// Total arclength of a polyline.
pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| distance(w[0], w[1])).sum()
}

/// Point at arclength `s` along a polyline (clamped to its ends).
pub fn point_at(points: &[Point], s: f64) -> Point {
    let mut acc = 0.0;
    for w in points.windows(2) {
        let len = distance(w[0], w[1]);
        if acc + len >= s && len > 0.0 {
            let t = ((s - acc) / len).clamp(0.0, 1.0);
            return [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
        }
        acc += len;
    }
    *points.last().expect("non-empty polyline")
}

impl World {
    /// A trajectory heading roughly north (+Y) built from constant-curvature
    /// pieces of `piece_length` meters. Each piece bends back toward north,
    /// keeping the heading within about `curvature_max · piece_length`.
    /// Lanes are the trajectory offset along its normal by `(j - (n-1)/2) ·
    /// spacing`, with track ids `1..=n`.
    pub fn generate(
        length: f64,
        piece_length: f64,
        curvature: (f64, f64),
        lanes: usize,
        spacing: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let steps = (length / WORLD_STEP).ceil() as usize;
        let per_piece = ((piece_length / WORLD_STEP).round() as usize).max(1);
        let (lo, hi) = curvature;
        let mut heading: f64 = 0.0;
        let mut kappa = 0.0;
        let mut pos = [0.0, 0.0];
        let mut trajectory = Vec::with_capacity(steps + 1);
        let mut headings = Vec::with_capacity(steps + 1);
        trajectory.push(pos);
        headings.push(heading);
        for i in 0..steps {
            if i % per_piece == 0 {
                let magnitude = if hi > lo { rng.random_range(lo..hi) } else { lo };
                let sign = if heading > 0.0 {
                    -1.0
                } else if heading < 0.0 {
                    1.0
                } else if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                };
                kappa = sign * magnitude;
            }
            heading += kappa * WORLD_STEP;
            pos = [pos[0] + WORLD_STEP * heading.sin(), pos[1] + WORLD_STEP * heading.cos()];
            trajectory.push(pos);
            headings.push(heading);
        }
        let lanes = (0..lanes)
            .map(|j| {
                let offset = (j as f64 - (lanes as f64 - 1.0) / 2.0) * spacing;
                let points = trajectory
                    .iter()
                    .zip(&headings)
                    .map(|(p, h)| [p[0] + offset * h.cos(), p[1] - offset * h.sin()])
                    .collect();
                WorldLane {
                    track_id: j as u32 + 1,
                    points,
                }
            })
            .collect();
        Self { trajectory, lanes }
    }
}

/// Regions of `height × width` pixels at `resolution` m/px centered on the
/// trajectory at arclengths `(k + 1/2) · spacing`, `k = 0..floor(L / spacing)`.
pub fn sample_regions(
    trajectory: &[Point],
    spacing: f64,
    height: usize,
    width: usize,
    resolution: f64,
) -> Result<Vec<RegionAnchor>> {
    if trajectory.len() < 2 || !(spacing > 0.0) {
        return Err(PlcError::invalid("degenerate trajectory or region spacing"));
    }
    let length = polyline_length(trajectory);
    if !(length >= spacing) || !length.is_finite() {
        return Err(PlcError::invalid(format!(
            "trajectory length {length} m is shorter than the region spacing {spacing} m"
        )));
    }
    let count = (length / spacing + 1e-9).floor() as usize;
    let regions = (0..count)
        .map(|k| {
            let c = point_at(trajectory, (k as f64 + 0.5) * spacing);
            RegionAnchor {
                x_lb: c[0] - width as f64 * resolution / 2.0,
                y_lb: c[1] - height as f64 * resolution / 2.0,
                height,
                width,
                resolution,
                region_index: k as u32,
            }
        })
        .collect::<Vec<_>>();
    for r in &regions {
        r.validate()?;
    }
    Ok(regions)
}

/// The longest run of a world lane inside the region, in image coordinates,
/// keeping every `stride`-th point (plus the run's last point). `None` when
/// the run is shorter than `min_length` pixels.
pub fn clip_lane(lane: &WorldLane, anchor: &RegionAnchor, stride: usize, min_length: f64) -> Option<Vec<Point>> {
    let (max_x, max_y) = ((anchor.width - 1) as f64, (anchor.height - 1) as f64);
    let mut best: Vec<Point> = Vec::new();
    let mut run: Vec<Point> = Vec::new();
    for &p in &lane.points {
        let q = geo_to_image(p, anchor);
        if (0.0..=max_x).contains(&q[0]) && (0.0..=max_y).contains(&q[1]) {
            run.push(q);
        } else {
            if run.len() > best.len() {
                best = std::mem::take(&mut run);
            }
            run.clear();
        }
    }
    if run.len() > best.len() {
        best = run;
    }
    if best.len() < 2 || polyline_length(&best) < min_length {
        return None;
    }
    let last = *best.last().expect("non-empty");
    let mut out: Vec<Point> = best.into_iter().step_by(stride.max(1)).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn straight_trajectory_regions() {
        let traj: Vec<Point> = (0..=120).map(|i| [0.0, i as f64]).collect();
        let regions = sample_regions(&traj, 40.0, 320, 160, 0.1).unwrap();
        assert_eq!(regions.len(), 3);
        assert!((regions[1].y_lb - (60.0 - 16.0)).abs() < 1e-9);
        assert!((regions[1].x_lb + 8.0).abs() < 1e-9);
        assert!(sample_regions(&traj[..10], 40.0, 320, 160, 0.1).is_err());
        assert!(sample_regions(&traj[..1], 40.0, 320, 160, 0.1).is_err());
    }

    #[test]
    fn centering_formula() {
        let traj = vec![[100.0, 200.0 - 20.0], [100.0, 200.0 + 20.0]];
        let r = sample_regions(&traj, 40.0, 2800, 1400, 0.1).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].x_lb - 30.0).abs() < 1e-9 && (r[0].y_lb - 60.0).abs() < 1e-9);
    }

    #[test]
    fn lanes_are_parallel_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = World::generate(200.0, 40.0, (0.002, 0.004), 3, 3.5, &mut rng);
        assert_eq!(w.lanes.len(), 3);
        for (a, b) in w.lanes[0].points.iter().zip(&w.lanes[1].points) {
            assert!((distance(*a, *b) - 3.5).abs() < 1e-9);
        }
        let headings_bounded = w.trajectory.windows(2).all(|p| {
            let h = (p[1][0] - p[0][0]).atan2(p[1][1] - p[0][1]);
            h.abs() < 0.004 * 40.0 + 1e-9
        });
        assert!(headings_bounded);
    }
}
