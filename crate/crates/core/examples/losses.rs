//! Every training loss on one batch, before and after a slight corruption
//! of the prediction, and the weighted total.
//!
//! cargo run --release --example losses

use candle_core::{DType, Tensor};
use inpaint::datapipe::{synth_dataset, Batch};
use inpaint::losses::{
    adversarial_losses, intermediate_loss, joint_value, perceptual_loss, reconstruction_loss, style_loss, LossTerms,
    LossWeights, RandomConvExtractor,
};

fn main() -> inpaint::Result<()> {
    let data = synth_dataset(4, 32, 3)?;
    let refs: Vec<_> = data.iter().collect();
    let batch = Batch::from_samples(&refs, DType::F32)?;
    let extractor = RandomConvExtractor::new(0x5eed, [16, 32, 64], DType::F32)?;
    let weights = LossWeights::default();
    let logits_gt = batch.edge_gt.affine(8.0, -4.0)?;

    for noise in [0.0f64, 0.05, 0.2] {
        let pred = (&batch.image_gt + Tensor::randn(0f32, noise.max(1e-6) as f32, batch.image_gt.shape(), batch.image_gt.device())?)?
            .clamp(0f32, 1f32)?;
        let d_real = Tensor::full(0.9f32, (4, 1, 2, 2), pred.device())?;
        let d_fake = Tensor::full(0.1f32, (4, 1, 2, 2), pred.device())?;
        let (l_d, l_g) = adversarial_losses(&d_real, &d_fake, &d_fake)?;
        let terms = LossTerms {
            rec: reconstruction_loss(&pred, &batch.image_gt)?.to_scalar::<f32>()? as f64,
            perc: perceptual_loss(&pred, &batch.image_gt, &extractor)?.to_scalar::<f32>()? as f64,
            style: style_loss(&pred, &batch.image_gt, &extractor)?.to_scalar::<f32>()? as f64,
            adv: l_g.to_scalar::<f32>()? as f64,
            inter: intermediate_loss(&logits_gt, &batch.edge_gt, &pred, &batch.image_gt)?.to_scalar::<f32>()? as f64,
        };
        println!(
            "noise {noise:4}: rec {:.4} perc {:.4} style {:.6} adv {:.3} inter {:.4} | D {:.3} | total {:.3}",
            terms.rec,
            terms.perc,
            terms.style,
            terms.adv,
            terms.inter,
            l_d.to_scalar::<f32>()?,
            joint_value(&terms, &weights)
        );
    }
    Ok(())
}
