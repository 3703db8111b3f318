//! 8-bit grayscale PNG/PGM reading and writing.

use std::path::Path;

use image::{GrayImage, ImageReader, Luma};
use pointseg_core::image::{BinaryMask, Dims, ImageGrid};

use crate::error::{Error, Result};

fn open_luma(path: &Path) -> Result<GrayImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_luma8())
}

/// Loads a grayscale image rescaled from `0..=255` to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let img = open_luma(path)?;
    let data = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Ok(ImageGrid::new(img.width() as usize, img.height() as usize, data)?)
}

/// Loads a mask; pixels above 127 are set.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = open_luma(path)?;
    let dims = Dims::new(img.width() as usize, img.height() as usize);
    Ok(BinaryMask::from_bits(dims, img.pixels().map(|p| p.0[0] > 127).collect())?)
}

/// Quantizes values in `[0, 1]` to 8 bits.
pub fn to_gray(dims: Dims, values: &[f64]) -> GrayImage {
    GrayImage::from_fn(dims.width as u32, dims.height as u32, |x, y| {
        let v = values[y as usize * dims.width + x as usize].clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    })
}

fn save(path: &Path, img: &GrayImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a `[0, 1]` field as an 8-bit image; the format follows the extension.
pub fn write_gray(path: &Path, dims: Dims, values: &[f64]) -> Result<()> {
    save(path, &to_gray(dims, values))
}

pub fn write_image(path: &Path, image: &ImageGrid) -> Result<()> {
    write_gray(path, image.dims(), image.data())
}

/// Writes a mask as 0/255.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let w = mask.width();
    let img = GrayImage::from_fn(w as u32, mask.height() as u32, |x, y| {
        Luma([if mask.bits()[y as usize * w + x as usize] { 255 } else { 0 }])
    });
    save(path, &img)
}
