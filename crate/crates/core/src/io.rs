//! PNG and binary PPM/PGM load/save.
//!
//! Eight-bit samples are mapped with `v / 255` on load and `round(v * 255)`
//! on save.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::raster::Raster;

fn codec(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec { path: path.to_path_buf(), message: e.to_string() }
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pgm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(codec(path, "unsupported extension (expected .png, .ppm or .pgm)")),
    }
}

/// Loads an 8-bit image. Gray images load as one channel, everything else
/// as RGB (alpha is dropped).
pub fn load(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = std::fs::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| codec(path, e))?;
    match img {
        DynamicImage::ImageLuma8(g) => {
            Raster::from_u8(g.width() as usize, g.height() as usize, 1, g.as_raw())
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            Raster::from_u8(g.width() as usize, g.height() as usize, 1, g.as_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            Raster::from_u8(rgb.width() as usize, rgb.height() as usize, 3, rgb.as_raw())
        }
    }
}

/// Saves as 8-bit PNG or binary PPM/PGM depending on the extension.
pub fn save(img: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = img.to_u8();
    let dynamic = if img.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer sized by raster"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer sized by raster"))
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    dynamic.save_with_format(path, format).map_err(|e| codec(path, e))
}
