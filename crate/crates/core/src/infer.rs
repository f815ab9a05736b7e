//! Full-resolution inference on 8-bit images.
//!
//! The model runs on a square resize of the request; its output is resized
//! back and pasted into the holes only, so known pixels keep their exact
//! input bytes.

use candle_core::DType;
use image::imageops::FilterType;
use image::{GrayImage, RgbImage};

use crate::datapipe::{array_to_gray, array_to_rgb, gray_to_mask, rgb_to_array, tensor_to_array, Batch, EdgeParams, Sample};
use crate::error::{Error, Result};
use crate::model::InpaintModel;

pub struct InpaintedImage {
    /// Input pixels where known, model output in the holes.
    pub composite: RgbImage,
    /// Raw model output at input resolution.
    pub output: RgbImage,
    /// Predicted structure, binarised at 0.5, 255 = edge.
    pub edges: GrayImage,
    /// Share of hole pixels in the input mask, in percent.
    pub mask_ratio_percent: f64,
}

/// Inpaints `image` where `mask < 128`. `target_size` defaults to the
/// model's training size.
pub fn inpaint_image(
    model: &InpaintModel,
    edges: EdgeParams,
    image: &RgbImage,
    mask: &GrayImage,
    target_size: Option<usize>,
) -> Result<InpaintedImage> {
    let (w, h) = image.dimensions();
    if mask.dimensions() != (w, h) {
        return Err(Error::InvalidInput(format!(
            "mask is {:?} but image is {:?}",
            mask.dimensions(),
            (w, h)
        )));
    }
    let size = target_size.unwrap_or(model.config().image_size);
    model.config().generator.check_resolution(size, size)?;

    let small_rgb = image::imageops::resize(image, size as u32, size as u32, FilterType::Triangle);
    let small_mask = image::imageops::resize(mask, size as u32, size as u32, FilterType::Nearest);
    let sample = Sample::new(rgb_to_array(&small_rgb), gray_to_mask(&small_mask), edges)?;
    let batch = Batch::from_samples(&[&sample], DType::F32)?;
    let result = model.inpaint_batch(&batch)?;

    let out_small = array_to_rgb(tensor_to_array(&result.output.image, 0)?.view())?;
    let output = image::imageops::resize(&out_small, w, h, FilterType::Triangle);
    let edge_small = tensor_to_array(&result.output.edge, 0)?.mapv(|p| if p >= 0.5 { 1.0 } else { 0.0 });
    let edge_small = array_to_gray(edge_small.view())?;
    let edges = image::imageops::resize(&edge_small, w, h, FilterType::Nearest);

    let mut composite = image.clone();
    let mut holes = 0u64;
    for (x, y, px) in composite.enumerate_pixels_mut() {
        if mask.get_pixel(x, y)[0] < 128 {
            *px = *output.get_pixel(x, y);
            holes += 1;
        }
    }
    Ok(InpaintedImage {
        composite,
        output,
        edges,
        mask_ratio_percent: 100.0 * holes as f64 / (u64::from(w) * u64::from(h)).max(1) as f64,
    })
}
