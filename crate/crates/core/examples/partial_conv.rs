//! Partial convolution over a half-missing feature map: the output mask
//! grows into the hole by the kernel radius, and with a full mask the layer
//! equals an ordinary convolution.
//!
//! cargo run --release --example partial_conv

use candle_core::{DType, Device, Tensor};
use inpaint::nn::{conv2d, ConvOpts};
use inpaint::pconv::{mask_coverage, partial_conv, PartialConvSpec};

fn main() -> inpaint::Result<()> {
    let dev = Device::Cpu;
    let x = Tensor::randn(0f64, 1.0, (1, 2, 8, 8), &dev)?;
    let w = Tensor::randn(0f64, 0.3, (4, 2, 3, 3), &dev)?;
    let b = Tensor::new(&[0.1f64, -0.2, 0.0, 0.3], &dev)?;
    let spec = PartialConvSpec::new(2, 4, 3, 1);

    let hole = Tensor::cat(&[Tensor::ones((1, 1, 8, 4), DType::F64, &dev)?, Tensor::zeros((1, 1, 8, 4), DType::F64, &dev)?], 3)?;
    let (_, updated) = partial_conv(&x, &hole, &w, Some(&b), &spec)?;
    println!("known fraction: {:.3} -> {:.3}", mask_coverage(&hole)?, mask_coverage(&updated)?);
    for row in updated.squeeze(0)?.squeeze(0)?.to_vec2::<f64>()?.iter().take(2) {
        println!("  {:?}", row.iter().map(|v| *v as u8).collect::<Vec<_>>());
    }

    let full = Tensor::ones((1, 1, 8, 8), DType::F64, &dev)?;
    let (y, _) = partial_conv(&x, &full, &w, Some(&b), &spec)?;
    let vanilla = conv2d(&x, &w, Some(&b), ConvOpts::same(3))?;
    let diff = (y - vanilla)?.abs()?.flatten_all()?.max(0)?.to_scalar::<f64>()?;
    println!("all-known mask vs plain conv: max |diff| = {diff:.2e}");
    Ok(())
}
