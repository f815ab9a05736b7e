//! Reconstruction, perceptual, style, adversarial and intermediate losses,
//! and their weighted sum.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv2d, max_pool2x2, seeded_rng, sigmoid, ConvOpts};

/// Floor applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub perc: f64,
    pub style: f64,
    pub adv: f64,
    pub inter: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 10.0,
            perc: 0.1,
            style: 250.0,
            adv: 0.1,
            inter: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rec", self.rec),
            ("perc", self.perc),
            ("style", self.style),
            ("adv", self.adv),
            ("inter", self.inter),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The five generator-side terms.
#[derive(Clone, Debug)]
pub struct LossTerms<T> {
    pub rec: T,
    pub perc: T,
    pub style: T,
    pub adv: T,
    pub inter: T,
}

/// Frozen multi-stage feature network used by the perceptual and style
/// losses. Implementations must not expose trainable state.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// `φ(x) = x`, a single stage.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![x.clone()])
    }
}

/// Three conv–ReLU–maxpool stages with fixed random weights.
///
/// Stands in for a pretrained classifier when none is available: the
/// activations are still a fixed, deterministic function of the image.
pub struct RandomConvExtractor {
    stages: Vec<(Tensor, Tensor)>,
}

impl RandomConvExtractor {
    pub fn new(seed: u64, widths: [usize; 3], dtype: DType) -> Result<Self> {
        use rand::Rng;
        let mut rng = seeded_rng(seed);
        let mut stages = Vec::with_capacity(3);
        let mut prev = 3;
        for w in widths {
            // He-style scale keeps activations from vanishing through ReLUs.
            let bound = (6.0 / (prev * 9) as f64).sqrt();
            let weights: Vec<f64> = (0..w * prev * 9).map(|_| rng.random_range(-bound..=bound)).collect();
            let bias: Vec<f64> = (0..w).map(|_| rng.random_range(-0.1..=0.1)).collect();
            stages.push((
                Tensor::from_vec(weights, (w, prev, 3, 3), &Device::Cpu)?.to_dtype(dtype)?,
                Tensor::from_vec(bias, w, &Device::Cpu)?.to_dtype(dtype)?,
            ));
            prev = w;
        }
        Ok(Self { stages })
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for (w, b) in &self.stages {
            h = max_pool2x2(&conv2d(&h, w, Some(b), ConvOpts::same(3))?.relu()?)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

/// VGG-16 up to `pool3`, loaded from a safetensors file with the usual
/// `features.{i}.weight` / `features.{i}.bias` names (i in 0,2,5,7,10,12,14).
pub struct Vgg16Extractor {
    blocks: Vec<Vec<(Tensor, Tensor)>>,
    mean: Tensor,
    std: Tensor,
}

impl Vgg16Extractor {
    const LAYOUT: [&'static [usize]; 3] = [&[0, 2], &[5, 7], &[10, 12, 14]];

    pub fn from_safetensors(path: &Path, dtype: DType) -> Result<Self> {
        let tensors: BTreeMap<String, Tensor> = candle_core::safetensors::load(path, &Device::Cpu)?.into_iter().collect();
        let mut blocks = Vec::new();
        for block in Self::LAYOUT {
            let mut convs = Vec::new();
            for idx in block {
                let get = |suffix: &str| -> Result<Tensor> {
                    let key = format!("features.{idx}.{suffix}");
                    Ok(tensors
                        .get(&key)
                        .ok_or_else(|| Error::InvalidInput(format!("VGG weight file lacks {key}")))?
                        .to_dtype(dtype)?)
                };
                convs.push((get("weight")?, get("bias")?));
            }
            blocks.push(convs);
        }
        let mean = Tensor::new(&[0.485f64, 0.456, 0.406], &Device::Cpu)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&[0.229f64, 0.224, 0.225], &Device::Cpu)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        Ok(Self { blocks, mean, std })
    }
}

impl FeatureExtractor for Vgg16Extractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut out = Vec::with_capacity(3);
        for block in &self.blocks {
            for (w, b) in block {
                h = conv2d(&h, w, Some(b), ConvOpts::same(3))?.relu()?;
            }
            h = max_pool2x2(&h)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    Ok((a - b)?.abs()?.mean_all()?)
}

pub fn reconstruction_loss(output: &Tensor, target: &Tensor) -> Result<Tensor> {
    l1(output, target)
}

fn sum_terms(terms: Vec<Tensor>) -> Result<Tensor> {
    let mut it = terms.into_iter();
    let first = it.next().ok_or_else(|| Error::InvalidInput("extractor produced no stages".into()))?;
    it.try_fold(first, |acc, t| Ok((acc + t)?))
}

/// Sum over stages of the mean L1 distance between activations.
pub fn perceptual_loss(output: &Tensor, target: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    same_shape(output, target)?;
    let fo = extractor.features(output)?;
    let ft = extractor.features(&target.detach())?;
    sum_terms(fo.iter().zip(&ft).map(|(a, b)| l1(a, b)).collect::<Result<_>>()?)
}

/// Gram matrices `(B, C, C)` of `(B, C, H, W)` activations, normalised by
/// `C·H·W`.
pub fn gram_matrix(f: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = f.dims4()?;
    let flat = f.reshape((b, c, h * w))?;
    let g = flat.matmul(&flat.t()?)?;
    Ok((g / (c * h * w) as f64)?)
}

/// Sum over stages of the mean L1 distance between Gram matrices.
pub fn style_loss(output: &Tensor, target: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    same_shape(output, target)?;
    let fo = extractor.features(output)?;
    let ft = extractor.features(&target.detach())?;
    sum_terms(
        fo.iter()
            .zip(&ft)
            .map(|(a, b)| l1(&gram_matrix(a)?, &gram_matrix(b)?))
            .collect::<Result<_>>()?,
    )
}

fn neg_log_mean(p: &Tensor) -> Result<Tensor> {
    Ok(p.maximum(LOG_CLAMP)?.log()?.mean_all()?.neg()?)
}

/// Discriminator loss from real scores and scores of detached fakes.
pub fn discriminator_loss(real: &Tensor, fake_detached: &Tensor) -> Result<Tensor> {
    let real_term = neg_log_mean(real)?;
    let fake_term = neg_log_mean(&fake_detached.affine(-1.0, 1.0)?)?;
    Ok((real_term + fake_term)?)
}

/// Non-saturating generator loss.
pub fn generator_adversarial_loss(fake: &Tensor) -> Result<Tensor> {
    neg_log_mean(fake)
}

/// `(L_D, L_G)` from the three score maps. `fake_detached` must be computed
/// from a detached generator output so `L_D` never reaches the generator.
pub fn adversarial_losses(real: &Tensor, fake_detached: &Tensor, fake: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((discriminator_loss(real, fake_detached)?, generator_adversarial_loss(fake)?))
}

/// Numerically stable binary cross-entropy on logits, averaged.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(logits, target)?;
    let softplus = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok(((logits.relu()? - logits.mul(target)?)? + softplus)?.mean_all()?)
}

/// Edge BCE on the structure projection plus L1 on the texture projection.
pub fn intermediate_loss(edge_logits: &Tensor, edge_gt: &Tensor, texture_preview: &Tensor, image_gt: &Tensor) -> Result<Tensor> {
    Ok((bce_with_logits(edge_logits, edge_gt)? + l1(texture_preview, image_gt)?)?)
}

/// `Σ λ_i L_i` over the five terms.
pub fn joint_loss(terms: &LossTerms<Tensor>, weights: &LossWeights) -> Result<Tensor> {
    let parts = [
        (&terms.rec, weights.rec),
        (&terms.perc, weights.perc),
        (&terms.style, weights.style),
        (&terms.adv, weights.adv),
        (&terms.inter, weights.inter),
    ];
    let mut acc: Option<Tensor> = None;
    for (t, w) in parts {
        let scaled = (t * w)?;
        acc = Some(match acc {
            Some(a) => (a + scaled)?,
            None => scaled,
        });
    }
    Ok(acc.expect("five terms"))
}

/// Scalar version of [`joint_loss`].
pub fn joint_value(terms: &LossTerms<f64>, weights: &LossWeights) -> f64 {
    weights.rec * terms.rec
        + weights.perc * terms.perc
        + weights.style * terms.style
        + weights.adv * terms.adv
        + weights.inter * terms.inter
}

/// Probabilities from logits, for callers that want `E_out`.
pub fn edge_probabilities(logits: &Tensor) -> Result<Tensor> {
    sigmoid(logits)
}
