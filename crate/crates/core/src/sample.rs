//! Samples and their on-disk layout.
//!
//! A sample `<id>` is three files in one directory: `<id>.png` (8-bit RGB
//! image), `<id>.json` (annotation sidecar) and `<id>_label.png` (8-bit gray,
//! values 0/1). A dataset directory holds `train/`, `test/` and
//! `manifest.json`.

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{PlcError, Result};
use crate::geo::RegionAnchor;
use crate::io;
use crate::lane::{LaneInstance, LaneRole};
use crate::raster::BinaryMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub image: RgbImage,
    pub anchor: RegionAnchor,
    pub initial: Vec<LaneInstance>,
    pub gt: Vec<LaneInstance>,
    pub label: BinaryMap,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.height() as usize
    }

    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn gt_for(&self, track_id: u32) -> Option<&LaneInstance> {
        self.gt.iter().find(|l| l.track_id == track_id)
    }
}

/// JSON sidecar of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub region_index: u32,
    /// `[X_lb, Y_lb]` in meters.
    pub left_bottom: [f64; 2],
    /// Meters per pixel.
    pub resolution: f64,
    pub lanes: Vec<LaneInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn label_to_gray(label: &BinaryMap) -> GrayImage {
    GrayImage::from_raw(label.width as u32, label.height as u32, label.data.clone()).expect("buffer matches size")
}

pub fn gray_to_label(img: &GrayImage, path: &Path) -> Result<BinaryMap> {
    if img.as_raw().iter().any(|&v| v > 1) {
        return Err(PlcError::format(path, "label values must be 0 or 1"));
    }
    Ok(BinaryMap {
        height: img.height() as usize,
        width: img.width() as usize,
        data: img.as_raw().clone(),
    })
}

fn sample_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{id}.png")),
        dir.join(format!("{id}.json")),
        dir.join(format!("{id}_label.png")),
    )
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    let (img_path, json_path, label_path) = sample_paths(dir, &sample.image_id);
    let lanes = sample.gt.iter().chain(&sample.initial).cloned().collect();
    let annotation = Annotation {
        image_id: sample.image_id.clone(),
        region_index: sample.anchor.region_index,
        left_bottom: [sample.anchor.x_lb, sample.anchor.y_lb],
        resolution: sample.anchor.resolution,
        lanes,
    };
    io::write_rgb_png(&img_path, &sample.image)?;
    io::write_gray_png(&label_path, &label_to_gray(&sample.label))?;
    io::write_json(&json_path, &annotation)
}

/// Reads one sample given its sidecar path. A missing label file is
/// tolerated (an empty label is substituted); anything malformed is a
/// format error naming the file.
pub fn read_sample(json_path: &Path) -> Result<Sample> {
    let annotation: Annotation = io::read_json(json_path)?;
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let (img_path, _, label_path) = sample_paths(dir, &annotation.image_id);
    let image = io::read_rgb_png(&img_path)?;
    let (h, w) = (image.height() as usize, image.width() as usize);
    let label = if label_path.exists() {
        let label = gray_to_label(&io::read_gray_png(&label_path)?, &label_path)?;
        if (label.height, label.width) != (h, w) {
            return Err(PlcError::format(&label_path, "label size differs from image"));
        }
        label
    } else {
        log::warn!("{}: no label file", json_path.display());
        BinaryMap::new(h, w)
    };
    let anchor = RegionAnchor {
        x_lb: annotation.left_bottom[0],
        y_lb: annotation.left_bottom[1],
        height: h,
        width: w,
        resolution: annotation.resolution,
        region_index: annotation.region_index,
    };
    anchor.validate().map_err(|e| PlcError::format(json_path, e))?;
    let mut initial = Vec::new();
    let mut gt = Vec::new();
    for lane in annotation.lanes {
        if lane.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PlcError::format(json_path, format!("track {}: non-finite point", lane.track_id)));
        }
        match lane.role {
            LaneRole::Initial => initial.push(lane),
            LaneRole::GroundTruth => gt.push(lane),
            LaneRole::Corrected => {}
        }
    }
    Ok(Sample {
        image_id: annotation.image_id,
        image,
        anchor,
        initial,
        gt,
        label,
    })
}

/// Sidecar files of a split directory, sorted by name.
pub fn list_samples(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| PlcError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| PlcError::io(dir, e))?.path();
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json && path.file_name().is_some_and(|n| n != MANIFEST) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_split(dir: &Path) -> Result<Vec<Sample>> {
    list_samples(dir)?.iter().map(|p| read_sample(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sample {
        let mut label = BinaryMap::new(4, 6);
        label.mark(2, 1);
        Sample {
            image_id: "r0007".into(),
            image: RgbImage::from_fn(6, 4, |x, y| image::Rgb([0, (x * 10) as u8, (y * 20) as u8])),
            anchor: RegionAnchor {
                x_lb: 12.5,
                y_lb: -3.25,
                height: 4,
                width: 6,
                resolution: 0.1,
                region_index: 7,
            },
            initial: vec![LaneInstance::new(3, LaneRole::Initial, vec![[0.5, 0.25], [5.0, 3.0]])],
            gt: vec![LaneInstance::new(3, LaneRole::GroundTruth, vec![[0.0, 0.0], [5.0, 3.0]])],
            label,
        }
    }

    #[test]
    fn sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), &s).unwrap();
        let paths = list_samples(dir.path()).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(read_sample(&paths[0]).unwrap(), s);
    }

    #[test]
    fn bad_label_value_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), &s).unwrap();
        let label_path = dir.path().join("r0007_label.png");
        io::write_gray_png(&label_path, &GrayImage::from_pixel(6, 4, image::Luma([255]))).unwrap();
        let err = read_sample(&dir.path().join("r0007.json")).unwrap_err();
        assert!(err.to_string().contains("r0007_label.png"));
    }
}
