//! Image, mask and manifest files.
//!
//! Mask PNGs are 8-bit grayscale with 255 for known pixels. Loading
//! thresholds at 128, so saved masks reload losslessly.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{GrayImage, ImageReader, RgbImage};
use ndarray::{Array3, ArrayView3};

use super::{EdgeParams, Sample};
use crate::error::{Error, Result};

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    Ok(reader.decode()?)
}

/// RGB `(3, H, W)` array from 8-bit pixels.
pub fn rgb_to_array(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
}

/// Binary `(1, H, W)` mask; values `>= 128` are known.
pub fn gray_to_mask(img: &GrayImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((1, h as usize, w as usize), |(_, y, x)| {
        if img.get_pixel(x as u32, y as u32)[0] >= 128 {
            1.0
        } else {
            0.0
        }
    })
}

pub fn array_to_rgb(a: ArrayView3<f32>) -> Result<RgbImage> {
    if a.shape()[0] != 3 {
        return Err(Error::InvalidInput(format!("expected 3 channels, got {}", a.shape()[0])));
    }
    let (h, w) = (a.shape()[1], a.shape()[2]);
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| to_u8(a[[c, y as usize, x as usize]])))
    }))
}

pub fn array_to_gray(a: ArrayView3<f32>) -> Result<GrayImage> {
    if a.shape()[0] != 1 {
        return Err(Error::InvalidInput(format!("expected 1 channel, got {}", a.shape()[0])));
    }
    let (h, w) = (a.shape()[1], a.shape()[2]);
    Ok(GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([to_u8(a[[0, y as usize, x as usize]])])))
}

/// Reads an image and resizes it bilinearly to `size × size` if needed.
pub fn load_image(path: &Path, size: usize) -> Result<Array3<f32>> {
    let mut rgb = open(path)?.to_rgb8();
    if rgb.dimensions() != (size as u32, size as u32) {
        rgb = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    }
    Ok(rgb_to_array(&rgb))
}

/// Reads a mask PNG, nearest-resizes it to `size × size` and binarises it.
pub fn load_mask(path: &Path, size: usize) -> Result<Array3<f32>> {
    let mut gray = open(path)?.to_luma8();
    if gray.dimensions() != (size as u32, size as u32) {
        gray = image::imageops::resize(&gray, size as u32, size as u32, FilterType::Nearest);
    }
    Ok(gray_to_mask(&gray))
}

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(img(path)?)
}

pub fn save_image_png(a: ArrayView3<f32>, path: &Path) -> Result<()> {
    let img = array_to_rgb(a)?;
    save(|p| img.save_with_format(p, image::ImageFormat::Png), path)
}

pub fn save_gray_png(a: ArrayView3<f32>, path: &Path) -> Result<()> {
    let img = array_to_gray(a)?;
    save(|p| img.save_with_format(p, image::ImageFormat::Png), path)
}

/// Writes a `{0, 1}` mask as 0 / 255.
pub fn save_mask_png(mask: ArrayView3<f32>, path: &Path) -> Result<()> {
    save_gray_png(mask.mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 }).view(), path)
}

/// Newline-delimited paths. Blank lines and `#` comments are skipped;
/// relative entries resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

/// PNG files of a mask directory in name order.
pub fn list_masks(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `images/NNNN.png`, `masks/NNNN.png` and `manifest.txt`.
pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:04}.png");
        save_image_png(s.image_gt(), &dir.join("images").join(&name))?;
        save_mask_png(s.mask(), &dir.join("masks").join(&name))?;
        manifest.push_str(&format!("images/{name}\n"));
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a directory laid out by [`write_dataset`]: every manifest entry is
/// paired with the mask of the same file name under `masks/`.
pub fn load_paired_dir(dir: &Path, size: usize, edges: EdgeParams) -> Result<Vec<Sample>> {
    let images = read_manifest(&dir.join("manifest.txt"))?;
    images
        .iter()
        .map(|img| {
            let name = img
                .file_name()
                .ok_or_else(|| Error::InvalidInput(format!("manifest entry {} has no file name", img.display())))?;
            let mask = load_mask(&dir.join("masks").join(name), size)?;
            Sample::new(load_image(img, size)?, mask, edges)
        })
        .collect()
}
