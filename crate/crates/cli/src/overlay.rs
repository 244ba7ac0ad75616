//! Static lane overlays: initial lanes as diamonds, corrected lanes as
//! squares and ground truth as circles, colored per track.

use image::{Rgb, RgbImage};
use plc_core::{LaneInstance, LaneRole, Point};

/// Half-width of a marker in pixels.
pub const MARKER_RADIUS: i64 = 2;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [255, 225, 25],
    [245, 130, 48],
    [240, 50, 230],
    [255, 255, 255],
    [145, 30, 180],
    [250, 190, 212],
    [128, 128, 0],
];

/// Color assigned to a track.
pub fn track_color(track_id: u32) -> [u8; 3] {
    PALETTE[track_id as usize % PALETTE.len()]
}

/// Marker shape for a lane role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Diamond,
    Square,
    Circle,
}

impl Marker {
    pub fn for_role(role: LaneRole) -> Self {
        match role {
            LaneRole::Initial => Marker::Diamond,
            LaneRole::Corrected => Marker::Square,
            LaneRole::GroundTruth => Marker::Circle,
        }
    }

    fn covers(self, dx: i64, dy: i64) -> bool {
        let r = MARKER_RADIUS;
        match self {
            Marker::Diamond => dx.abs() + dy.abs() <= r,
            Marker::Square => dx.abs().max(dy.abs()) <= r,
            Marker::Circle => dx * dx + dy * dy <= r * r,
        }
    }
}

fn stamp(img: &mut RgbImage, center: Point, marker: Marker, color: [u8; 3]) {
    let (cx, cy) = (center[0].round() as i64, center[1].round() as i64);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = MARKER_RADIUS;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            if marker.covers(dx, dy) && (0..w).contains(&x) && (0..h).contains(&y) {
                img.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }
}

/// Draws every lane point as a marker. Returns the number of markers drawn
/// (one per point, whether or not it falls on the canvas). Ground truth is
/// drawn last so its markers stay visible.
pub fn draw_lanes(img: &mut RgbImage, lanes: &[LaneInstance]) -> usize {
    let mut count = 0;
    for role in [LaneRole::Initial, LaneRole::Corrected, LaneRole::GroundTruth] {
        for lane in lanes.iter().filter(|l| l.role == role) {
            let color = track_color(lane.track_id);
            for &p in &lane.points {
                stamp(img, p, Marker::for_role(role), color);
                count += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert!(Marker::Square.covers(2, 2));
        assert!(!Marker::Diamond.covers(2, 1));
        assert!(Marker::Diamond.covers(1, 1));
        assert!(!Marker::Circle.covers(2, 1));
        assert!(Marker::Circle.covers(2, 0));
    }

    #[test]
    fn ground_truth_on_top() {
        let mut img = RgbImage::new(10, 10);
        let lanes = vec![
            LaneInstance::new(2, LaneRole::GroundTruth, vec![[5.0, 5.0]]),
            LaneInstance::new(1, LaneRole::Corrected, vec![[5.0, 5.0]]),
        ];
        assert_eq!(draw_lanes(&mut img, &lanes), 2);
        assert_eq!(img.get_pixel(5, 5).0, track_color(2));
        // square corner outside the circle keeps the corrected color
        assert_eq!(img.get_pixel(7, 7).0, track_color(1));
    }

    #[test]
    fn off_canvas_points_are_clipped() {
        let mut img = RgbImage::new(4, 4);
        let lanes = vec![LaneInstance::new(0, LaneRole::Initial, vec![[-10.0, 2.0], [3.4, 3.6]])];
        assert_eq!(draw_lanes(&mut img, &lanes), 2);
        assert_eq!(img.get_pixel(3, 3).0, track_color(0));
    }
}
