//! Intensity fields and their color rendering.
//!
//! Intensities are normalized over the image, `r = (U - U_min) / (U_max -
//! U_min)`, and colored `(0, floor(255 r), floor(255 (1 - r)))`: low
//! reflectivity is blue, high is green.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::lane::Point;

/// Color of one normalized intensity. A flat image (`U_max == U_min`)
/// renders every pixel with `r = 0`.
pub fn intensity_color(u: f64, u_min: f64, u_max: f64) -> [u8; 3] {
    let r = if u_max > u_min { ((u - u_min) / (u_max - u_min)).clamp(0.0, 1.0) } else { 0.0 };
    [0, (r * 255.0).floor() as u8, ((1.0 - r) * 255.0).floor() as u8]
}

/// Colors a row-major `height × width` intensity field.
pub fn render_intensity(field: &[f64], height: usize, width: usize) -> RgbImage {
    assert_eq!(field.len(), height * width, "field size");
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &u| (lo.min(u), hi.max(u)));
    let mut img = RgbImage::new(width as u32, height as u32);
    for (px, &u) in img.pixels_mut().zip(field) {
        *px = Rgb(intensity_color(u, lo, hi));
    }
    img
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Distance from each pixel center to the nearest lane, computed only within
/// `reach` pixels of a lane (infinity elsewhere).
pub fn lane_distance_field(lanes: &[Vec<Point>], height: usize, width: usize, reach: f64) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; height * width];
    for lane in lanes {
        for w in lane.windows(2) {
            let (a, b) = (w[0], w[1]);
            let x0 = (a[0].min(b[0]) - reach).floor().max(0.0) as usize;
            let y0 = (a[1].min(b[1]) - reach).floor().max(0.0) as usize;
            let x1 = (a[0].max(b[0]) + reach).ceil().min(width as f64 - 1.0);
            let y1 = (a[1].max(b[1]) + reach).ceil().min(height as f64 - 1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let d = segment_distance([x as f64, y as f64], a, b);
                    let slot = &mut dist[y * width + x];
                    if d < *slot {
                        *slot = d;
                    }
                }
            }
        }
    }
    dist
}

/// Lane reflectivity: a Gaussian ridge of standard deviation `ridge_sigma`
/// pixels around each lane, over a dark background with additive Gaussian
/// noise of standard deviation `noise_sigma` (ridge peak = 1).
pub fn intensity_field(
    lanes: &[Vec<Point>],
    height: usize,
    width: usize,
    ridge_sigma: f64,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let dist = lane_distance_field(lanes, height, width, 4.0 * ridge_sigma + 1.0);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    dist.iter()
        .map(|&d| {
            let ridge = if d.is_finite() { (-0.5 * (d / ridge_sigma).powi(2)).exp() } else { 0.0 };
            ridge + noise.sample(rng)
        })
        .collect()
}
