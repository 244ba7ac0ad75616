//! Binary lane masks: exact polyline-to-pixel traversal plus square dilation.
//!
//! Pixel `(i, j)` (column, row) owns the half-open cell
//! `[i - 0.5, i + 0.5) × [j - 0.5, j + 0.5)`, so integer coordinates are pixel
//! centers. A polyline marks every cell that contains at least one of its
//! points.

use std::collections::BTreeSet;

use crate::lane::Point;

/// `height × width` map of 0/1 bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    /// Marks `(x, y)` if it lies on the canvas.
    pub fn mark(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.data[y as usize * self.width + x as usize] = 1;
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    /// Chebyshev (square) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        let mut rows = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                if self.data[y * w + x] != 0 {
                    let lo = x.saturating_sub(radius);
                    let hi = (x + radius).min(w - 1);
                    rows[y * w + lo..=y * w + hi].fill(1);
                }
            }
        }
        let mut out = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                if rows[y * w + x] != 0 {
                    let lo = y.saturating_sub(radius);
                    let hi = (y + radius).min(h - 1);
                    for yy in lo..=hi {
                        out[yy * w + x] = 1;
                    }
                }
            }
        }
        Self {
            height: h,
            width: w,
            data: out,
        }
    }
}

/// Pixel whose cell contains `p`.
pub fn containing_pixel(p: Point) -> (i64, i64) {
    ((p[0] + 0.5).floor() as i64, (p[1] + 0.5).floor() as i64)
}

/// Every cell (on or off canvas) crossed by the segment `a → b`.
///
/// Grid traversal in cell space (`u = x + 0.5`). When the segment passes
/// exactly through a cell corner, the corner point belongs to the cell with
/// the larger index on each axis, which is the cell reached by stepping the
/// increasing axes first.
pub fn segment_cells(a: Point, b: Point) -> Vec<(i64, i64)> {
    if !(a[0].is_finite() && a[1].is_finite() && b[0].is_finite() && b[1].is_finite()) {
        return Vec::new();
    }
    let (u0, v0) = (a[0] + 0.5, a[1] + 0.5);
    let (du, dv) = (b[0] - a[0], b[1] - a[1]);
    let (mut cx, mut cy) = (u0.floor() as i64, v0.floor() as i64);
    let end = ((b[0] + 0.5).floor() as i64, (b[1] + 0.5).floor() as i64);
    let mut cells = vec![(cx, cy)];

    let axis = |start: f64, delta: f64, cell: i64| -> (i64, f64, f64) {
        if delta > 0.0 {
            (1, (cell as f64 + 1.0 - start) / delta, 1.0 / delta)
        } else if delta < 0.0 {
            (-1, (cell as f64 - start) / delta, -1.0 / delta)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tx, dtx) = axis(u0, du, cx);
    let (sy, mut ty, dty) = axis(v0, dv, cy);
    let budget = (end.0 - cx).unsigned_abs() + (end.1 - cy).unsigned_abs() + 2;

    for _ in 0..budget {
        if (cx, cy) == end {
            break;
        }
        if tx < ty {
            cx += sx;
            tx += dtx;
        } else if ty < tx {
            cy += sy;
            ty += dty;
        } else {
            // exact corner crossing
            if sx > 0 && sy < 0 {
                cells.push((cx + 1, cy));
            } else if sx < 0 && sy > 0 {
                cells.push((cx, cy + 1));
            }
            cx += sx;
            cy += sy;
            tx += dtx;
            ty += dty;
        }
        cells.push((cx, cy));
    }
    cells
}

/// Centerline pixels of a polyline, clipped to the canvas.
pub fn rasterize_polyline(points: &[Point], height: usize, width: usize) -> BinaryMap {
    let mut map = BinaryMap::new(height, width);
    match points {
        [] => {}
        [p] => {
            let (x, y) = containing_pixel(*p);
            map.mark(x, y);
        }
        _ => {
            for seg in points.windows(2) {
                for (x, y) in segment_cells(seg[0], seg[1]) {
                    map.mark(x, y);
                }
            }
        }
    }
    map
}

/// Centerline of every lane, dilated by `radius`.
pub fn lanes_mask<'a>(lanes: impl IntoIterator<Item = &'a [Point]>, height: usize, width: usize, radius: usize) -> BinaryMap {
    let mut center = BinaryMap::new(height, width);
    for lane in lanes {
        let m = rasterize_polyline(lane, height, width);
        for (c, v) in center.data.iter_mut().zip(m.data) {
            *c |= v;
        }
    }
    center.dilate(radius)
}

/// Positive pixels as a set, for small-canvas comparisons.
pub fn pixel_set(map: &BinaryMap) -> BTreeSet<(usize, usize)> {
    map.positives().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizontal_segment_band() {
        let map = lanes_mask([&[[2.0, 5.0], [10.0, 5.0]][..]], 20, 20, 1);
        for y in 0..20 {
            for x in 0..20 {
                let expected = (4..=6).contains(&y) && (1..=11).contains(&x);
                assert_eq!(map.get(x, y), expected, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn empty_lane_list_is_blank() {
        let map = lanes_mask(std::iter::empty::<&[Point]>(), 8, 8, 1);
        assert_eq!(map.count(), 0);
    }

    #[test]
    fn diagonal_through_corners() {
        // (0,0)→(3,3) passes through cell corners; the corner belongs to the
        // diagonal successor, so only the diagonal cells are marked.
        let cells = segment_cells([0.0, 0.0], [3.0, 3.0]);
        assert_eq!(cells, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        // rising-x falling-y: corner (0.5, -0.5) lives in cell (1, 0)
        let cells = segment_cells([0.0, 0.0], [2.0, -2.0]);
        assert_eq!(cells, vec![(0, 0), (1, 0), (1, -1), (2, -1), (2, -2)]);
    }

    #[test]
    fn reverse_direction_covers_same_cells_off_corners() {
        let a = [0.3, 7.1];
        let b = [9.7, 1.2];
        let mut f = segment_cells(a, b);
        let mut r = segment_cells(b, a);
        f.sort();
        r.sort();
        assert_eq!(f, r);
    }

    #[test]
    fn dilation_clips_at_borders() {
        let mut m = BinaryMap::new(4, 4);
        m.mark(0, 0);
        let d = m.dilate(2);
        assert_eq!(d.count(), 9);
    }
}
