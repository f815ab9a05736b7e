//! Power iteration converging on the largest singular value of a random
//! weight matrix.
//!
//! cargo run --release --example spectral_norm

use candle_core::{Device, Tensor};
use inpaint::discriminator::spectral_normalize;

fn main() -> inpaint::Result<()> {
    let dev = Device::Cpu;
    let w = Tensor::randn(0f64, 1.0, (32, 48), &dev)?;
    let mut u = Tensor::ones(32, candle_core::DType::F64, &dev)?;
    for step in 1..=20 {
        let (normalized, next, sigma) = spectral_normalize(&w, &u, 1)?;
        u = next;
        if step % 4 == 0 || step == 1 {
            let (_, _, check) = spectral_normalize(&normalized, &u, 50)?;
            println!(
                "step {step:2}: sigma {:.5}  sigma of normalized weight {:.5}",
                sigma.to_scalar::<f64>()?,
                check.to_scalar::<f64>()?
            );
        }
    }
    Ok(())
}
