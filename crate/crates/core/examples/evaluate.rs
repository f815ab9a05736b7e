//! Bucketed PSNR / SSIM table for the ground truth, the zero-filled input
//! and an untrained model.
//!
//! cargo run --release --example evaluate

use inpaint::datapipe::synth_dataset;
use inpaint::evaluate::{evaluate, GroundTruth, ZeroFill};
use inpaint::model::{InpaintModel, ModelConfig};

fn main() -> inpaint::Result<()> {
    let data = synth_dataset(48, 32, 11)?;
    let model = InpaintModel::new(&ModelConfig::desk(32), 0)?;
    for (name, table) in [
        ("ground truth", evaluate(&GroundTruth, &data, true)?),
        ("zero fill", evaluate(&ZeroFill, &data, true)?),
        ("untrained model", evaluate(&model, &data, true)?),
    ] {
        println!("{name}\n{}", table.to_text());
    }
    Ok(())
}
