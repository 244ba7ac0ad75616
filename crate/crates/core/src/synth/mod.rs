//! Synthetic stand-in for the survey data: winding multi-lane roads,
//! point-cloud-style intensity images, perturbed initial lanes and
//! segmentation labels.

mod render;
mod world;

pub use render::{intensity_color, intensity_field, lane_distance_field, render_intensity};
pub use world::{clip_lane, point_at, polyline_length, sample_regions, World, WorldLane, WORLD_STEP};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{bad, KeyValues};
use crate::error::Result;
use crate::geo::{geo_to_image, RegionAnchor};
use crate::io;
use crate::lane::{LaneInstance, LaneRole, Point};
use crate::raster::{lanes_mask, BinaryMap};
use crate::sample::{write_sample, Manifest, Sample, MANIFEST};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_regions: usize,
    pub lanes_per_scene: usize,
    /// Trajectory curvature magnitude range, 1/m.
    pub curvature_min: f64,
    pub curvature_max: f64,
    /// Meters between neighboring lanes.
    pub lane_spacing: f64,
    /// Lateral sinusoidal drift amplitude of initial lanes, pixels.
    pub drift_amplitude: f64,
    /// Drift wavelength along the lane, pixels.
    pub drift_wavelength: f64,
    /// Per-point Gaussian noise of initial lanes, pixels (each axis).
    pub noise_sigma: f64,
    /// Background intensity noise relative to the lane ridge peak.
    pub intensity_noise: f64,
    /// Standard deviation of the lane reflectivity ridge, meters.
    pub ridge_width: f64,
    pub region_height: usize,
    pub region_width: usize,
    /// Meters per pixel.
    pub resolution: f64,
    /// Trajectory arclength between region centers, meters.
    pub region_spacing: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_regions: 10,
            lanes_per_scene: 4,
            curvature_min: 0.0,
            curvature_max: 0.004,
            lane_spacing: 3.5,
            drift_amplitude: 4.5,
            drift_wavelength: 400.0,
            noise_sigma: 0.8,
            intensity_noise: 0.1,
            ridge_width: 0.15,
            region_height: 320,
            region_width: 160,
            resolution: 0.1,
            region_spacing: 40.0,
            seed: 0,
        }
    }
}

pub const SYNTH_KEYS: [&str; 15] = [
    "n_regions",
    "lanes_per_scene",
    "curvature_min",
    "curvature_max",
    "lane_spacing",
    "drift_amplitude",
    "drift_wavelength",
    "noise_sigma",
    "intensity_noise",
    "ridge_width",
    "region_height",
    "region_width",
    "resolution",
    "region_spacing",
    "seed",
];

impl SynthParams {
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, &SYNTH_KEYS)?;
        let mut p = Self::default();
        kv.read("n_regions", &mut p.n_regions)?;
        kv.read("lanes_per_scene", &mut p.lanes_per_scene)?;
        kv.read("curvature_min", &mut p.curvature_min)?;
        kv.read("curvature_max", &mut p.curvature_max)?;
        kv.read("lane_spacing", &mut p.lane_spacing)?;
        kv.read("drift_amplitude", &mut p.drift_amplitude)?;
        kv.read("drift_wavelength", &mut p.drift_wavelength)?;
        kv.read("noise_sigma", &mut p.noise_sigma)?;
        kv.read("intensity_noise", &mut p.intensity_noise)?;
        kv.read("ridge_width", &mut p.ridge_width)?;
        kv.read("region_height", &mut p.region_height)?;
        kv.read("region_width", &mut p.region_width)?;
        kv.read("resolution", &mut p.resolution)?;
        kv.read("region_spacing", &mut p.region_spacing)?;
        kv.read("seed", &mut p.seed)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_regions < 5 {
            return Err(bad("n_regions", "need at least 5 regions for a 3:2 split"));
        }
        if self.region_height == 0 || self.region_width == 0 {
            return Err(bad("region_height", "region size must be positive"));
        }
        for (key, v) in [
            ("curvature_min", self.curvature_min),
            ("curvature_max", self.curvature_max),
            ("lane_spacing", self.lane_spacing),
            ("drift_amplitude", self.drift_amplitude),
            ("noise_sigma", self.noise_sigma),
            ("intensity_noise", self.intensity_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(key, format!("{v} must be finite and >= 0")));
            }
        }
        if self.curvature_max < self.curvature_min {
            return Err(bad("curvature_max", "below curvature_min"));
        }
        for (key, v) in [
            ("drift_wavelength", self.drift_wavelength),
            ("ridge_width", self.ridge_width),
            ("resolution", self.resolution),
            ("region_spacing", self.region_spacing),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(key, format!("{v} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

/// Random stream for one region and purpose, independent of generation order.
pub fn region_rng(seed: u64, region_index: u32, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((region_index as u64) << 8) | purpose);
    rng
}

const WORLD_STREAM: u64 = u64::MAX;
const RENDER: u64 = 1;
const PERTURB: u64 = 2;

/// Perturbation of initial lanes relative to ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub amplitude: f64,
    pub wavelength: f64,
    pub noise_sigma: f64,
}

/// `initial = GT + a·sin(2π s/λ + φ)·n̂ + N(0, σ²)` per point, where `s` is
/// arclength along the lane, `n̂` the unit normal and `φ` a random phase per
/// lane. Track ids are copied.
pub fn perturb_lanes(gt: &[LaneInstance], p: &Perturbation, seed: u64) -> Vec<LaneInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, p.noise_sigma).expect("finite sigma");
    gt.iter()
        .map(|lane| {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let pts = &lane.points;
            let n = pts.len();
            let mut s = 0.0;
            let points = (0..n)
                .map(|k| {
                    if k > 0 {
                        s += (pts[k][0] - pts[k - 1][0]).hypot(pts[k][1] - pts[k - 1][1]);
                    }
                    let (a, b) = (pts[k.saturating_sub(1)], pts[(k + 1).min(n - 1)]);
                    let t = [b[0] - a[0], b[1] - a[1]];
                    let len = t[0].hypot(t[1]);
                    let normal = if len > 0.0 { [-t[1] / len, t[0] / len] } else { [0.0, 0.0] };
                    let drift = p.amplitude * (std::f64::consts::TAU * s / p.wavelength + phase).sin();
                    let (ex, ey) = if p.noise_sigma > 0.0 {
                        (noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    [pts[k][0] + drift * normal[0] + ex, pts[k][1] + drift * normal[1] + ey]
                })
                .collect();
            LaneInstance::new(lane.track_id, LaneRole::Initial, points)
        })
        .collect()
}

/// GT centerlines rasterized and dilated by one pixel.
pub fn rasterize_label(gt: &[LaneInstance], height: usize, width: usize) -> BinaryMap {
    lanes_mask(gt.iter().map(|l| l.points.as_slice()), height, width, 1)
}

/// Renders one region of `world`. Pure in `(world, anchor, params)`.
pub fn render_region(world: &World, anchor: &RegionAnchor, params: &SynthParams) -> Sample {
    let (h, w) = (anchor.height, anchor.width);
    let ridge_px = params.ridge_width / anchor.resolution;
    let margin = 4.0 * ridge_px + 2.0;
    let local: Vec<Vec<Point>> = world
        .lanes
        .iter()
        .map(|lane| {
            lane.points
                .iter()
                .map(|&p| geo_to_image(p, anchor))
                .filter(|q| q[0] > -margin && q[1] > -margin && q[0] < w as f64 + margin && q[1] < h as f64 + margin)
                .collect()
        })
        .collect();
    let mut rng = region_rng(params.seed, anchor.region_index, RENDER);
    let field = intensity_field(&local, h, w, ridge_px, params.intensity_noise, &mut rng);
    let image = render_intensity(&field, h, w);

    // GT polylines every ~1 m
    let stride = ((1.0 / WORLD_STEP).round() as usize).max(1);
    let gt: Vec<LaneInstance> = world
        .lanes
        .iter()
        .filter_map(|lane| {
            clip_lane(lane, anchor, stride, h.min(w) as f64 / 2.0)
                .map(|pts| LaneInstance::new(lane.track_id, LaneRole::GroundTruth, pts))
        })
        .collect();
    let perturb = Perturbation {
        amplitude: params.drift_amplitude,
        wavelength: params.drift_wavelength,
        noise_sigma: params.noise_sigma,
    };
    let perturb_seed = region_rng(params.seed, anchor.region_index, PERTURB).random();
    let initial = perturb_lanes(&gt, &perturb, perturb_seed);
    let label = rasterize_label(&gt, h, w);
    Sample {
        image_id: format!("r{:04}", anchor.region_index),
        image,
        anchor: *anchor,
        initial,
        gt,
        label,
    }
}

/// Regions whose index satisfies `index % 5 < 3` train, the rest test.
pub fn is_train_region(region_index: u32) -> bool {
    region_index % 5 < 3
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub world: World,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn build_world(params: &SynthParams) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(WORLD_STREAM);
    World::generate(
        params.n_regions as f64 * params.region_spacing,
        params.region_spacing,
        (params.curvature_min, params.curvature_max),
        params.lanes_per_scene,
        params.lane_spacing,
        &mut rng,
    )
}

pub fn build_dataset(params: &SynthParams) -> Result<Dataset> {
    params.validate()?;
    let world = build_world(params);
    let mut anchors = sample_regions(
        &world.trajectory,
        params.region_spacing,
        params.region_height,
        params.region_width,
        params.resolution,
    )?;
    anchors.truncate(params.n_regions);
    let samples: Vec<Sample> = anchors.par_iter().map(|a| render_region(&world, a, params)).collect();
    let (train, test) = samples
        .into_iter()
        .partition(|s| is_train_region(s.anchor.region_index));
    Ok(Dataset { world, train, test })
}

/// Builds the dataset and writes `train/`, `test/` and `manifest.json`
/// (written last) under `out`.
pub fn write_dataset(params: &SynthParams, out: &Path) -> Result<Manifest> {
    let data = build_dataset(params)?;
    let (train_dir, test_dir) = (out.join("train"), out.join("test"));
    io::create_dir_all(&train_dir)?;
    io::create_dir_all(&test_dir)?;
    data.train
        .par_iter()
        .map(|s| write_sample(&train_dir, s))
        .chain(data.test.par_iter().map(|s| write_sample(&test_dir, s)))
        .collect::<Result<()>>()?;
    let manifest = Manifest {
        seed: params.seed,
        train: data.train.len(),
        test: data.test.len(),
        train_ids: data.train.iter().map(|s| s.image_id.clone()).collect(),
        test_ids: data.test.iter().map(|s| s.image_id.clone()).collect(),
    };
    io::write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(track_id: u32, len: usize) -> LaneInstance {
        LaneInstance::new(track_id, LaneRole::GroundTruth, (0..len).map(|i| [20.0, i as f64 * 10.0]).collect())
    }

    #[test]
    fn null_perturbation_is_identity() {
        let gt = vec![straight(1, 20), straight(2, 5)];
        let p = Perturbation {
            amplitude: 0.0,
            wavelength: 100.0,
            noise_sigma: 0.0,
        };
        let init = perturb_lanes(&gt, &p, 9);
        for (a, b) in init.iter().zip(&gt) {
            assert_eq!(a.points, b.points);
            assert_eq!(a.track_id, b.track_id);
            assert_eq!(a.role, LaneRole::Initial);
        }
    }

    #[test]
    fn drift_is_bounded_and_seeded() {
        let gt = vec![straight(1, 50)];
        let p = Perturbation {
            amplitude: 3.0,
            wavelength: 120.0,
            noise_sigma: 0.0,
        };
        let a = perturb_lanes(&gt, &p, 1);
        assert_eq!(a, perturb_lanes(&gt, &p, 1));
        let max = a[0]
            .points
            .iter()
            .zip(&gt[0].points)
            .map(|(x, y)| (x[0] - y[0]).hypot(x[1] - y[1]))
            .fold(0.0, f64::max);
        assert!(max <= 3.0 + 1e-9 && max > 2.0);
    }

    #[test]
    fn split_ratio() {
        let train = (0..10).filter(|&i| is_train_region(i)).count();
        assert_eq!(train, 6);
    }

    #[test]
    fn params_from_kv() {
        let p = SynthParams::from_kv("n_regions = 20\nseed = 7").unwrap();
        assert_eq!((p.n_regions, p.seed), (20, 7));
        assert!(SynthParams::from_kv("n_regions = 4").is_err());
        assert!(SynthParams::from_kv("drift_amplitude = -1").is_err());
        assert!(SynthParams::from_kv("colour = 1").is_err());
    }
}
