//! 8-bit RGB PNG. Channels are quantized as `round(v · 255)`.

use std::path::Path;

use image::{ImageBuffer as PngBuffer, Rgb};

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8(img: &ImageBuffer) -> Vec<u8> {
    img.data().iter().map(|v| quantize(*v)).collect()
}

pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<ImageBuffer> {
    ImageBuffer::from_raw(width, height, bytes.iter().map(|b| *b as f64 / 255.0).collect())
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let buf: PngBuffer<Rgb<u8>, Vec<u8>> =
        PngBuffer::from_raw(img.width() as u32, img.height() as u32, to_rgb8(img))
            .ok_or_else(|| Error::DimensionMismatch("image buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}
