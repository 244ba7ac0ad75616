//! File helpers shared by every artifact writer: atomic writes, JSON and PNG.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{PlcError, Result};

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes `bytes` to a temp file next to `path`, syncs, then renames it over
/// `path`. Readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(PlcError::io(path, e));
    }
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PlcError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PlcError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PlcError::format(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PlcError::format(path, e))
}

fn encode_png<P, C>(image: &image::ImageBuffer<P, C>) -> std::result::Result<Vec<u8>, image::ImageError>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut buf = std::io::Cursor::new(Vec::new());
    image.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_rgb_png(path: &Path, image: &RgbImage) -> Result<()> {
    let bytes = encode_png(image).map_err(|e| PlcError::format(path, e))?;
    write_atomic(path, &bytes)
}

pub fn write_gray_png(path: &Path, image: &GrayImage) -> Result<()> {
    let bytes = encode_png(image).map_err(|e| PlcError::format(path, e))?;
    write_atomic(path, &bytes)
}

fn decode_png(path: &Path) -> Result<image::DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| PlcError::format(path, e))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    match decode_png(path)? {
        image::DynamicImage::ImageRgb8(img) => Ok(img),
        other => Err(PlcError::format(path, format!("expected 8-bit RGB, got {:?}", other.color()))),
    }
}

pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    match decode_png(path)? {
        image::DynamicImage::ImageLuma8(img) => Ok(img),
        other => Err(PlcError::format(path, format!("expected 8-bit gray, got {:?}", other.color()))),
    }
}

pub fn create_dir_all(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PlcError::io(dir, e))
}
