//! Lane polylines in image coordinates (pixels, x right, y down).

use serde::{Deserialize, Serialize};

/// `[x, y]` in pixels or `[X, Y]` in meters, depending on context.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaneRole {
    Initial,
    GroundTruth,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneInstance {
    pub track_id: u32,
    pub role: LaneRole,
    pub points: Vec<Point>,
}

impl LaneInstance {
    pub fn new(track_id: u32, role: LaneRole, points: Vec<Point>) -> Self {
        Self {
            track_id,
            role,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same lane with every point multiplied by `(sx, sy)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            track_id: self.track_id,
            role: self.role,
            points: self.points.iter().map(|p| [p[0] * sx, p[1] * sy]).collect(),
        }
    }
}

/// Per-point `(Δx, Δy)` corrections for one lane.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub offsets: Vec<Point>,
}

impl OffsetField {
    pub fn zeros(len: usize) -> Self {
        Self {
            offsets: vec![[0.0, 0.0]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// `target - initial`, point by point.
    pub fn between(initial: &[Point], target: &[Point]) -> Self {
        Self {
            offsets: initial
                .iter()
                .zip(target)
                .map(|(a, b)| [b[0] - a[0], b[1] - a[1]])
                .collect(),
        }
    }

    /// Offsets as a `[2, M]` row-major array (Δx row, then Δy row).
    pub fn to_rows(&self) -> Vec<f64> {
        let m = self.offsets.len();
        let mut rows = vec![0.0; 2 * m];
        for (k, o) in self.offsets.iter().enumerate() {
            rows[k] = o[0];
            rows[m + k] = o[1];
        }
        rows
    }

    pub fn from_rows(rows: &[f64]) -> Self {
        let m = rows.len() / 2;
        Self {
            offsets: (0..m).map(|k| [rows[k], rows[m + k]]).collect(),
        }
    }
}

pub(crate) fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
