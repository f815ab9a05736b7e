//! Alternating discriminator / generator optimisation.

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint, Phase};
use crate::datapipe::{Batch, Sample};
use crate::error::{Error, Result};
use crate::generator::composite;
use crate::losses::{
    adversarial_losses, generator_adversarial_loss, intermediate_loss, joint_loss, perceptual_loss,
    reconstruction_loss, style_loss, FeatureExtractor, IdentityExtractor, LossTerms, LossWeights,
    RandomConvExtractor, Vgg16Extractor,
};
use crate::model::{InpaintModel, ModelConfig};
use crate::nn::{Adam, RunMode};
use crate::pconv::mask_coverage;

/// Which frozen network feeds the perceptual and style losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExtractorSpec {
    Random { seed: u64 },
    Identity,
    Vgg16 { weights: PathBuf },
}

impl ExtractorSpec {
    pub fn build(&self) -> Result<Box<dyn FeatureExtractor>> {
        Ok(match self {
            ExtractorSpec::Random { seed } => Box::new(RandomConvExtractor::new(*seed, [16, 32, 64], DType::F32)?),
            ExtractorSpec::Identity => Box::new(IdentityExtractor),
            ExtractorSpec::Vgg16 { weights } => Box::new(Vgg16Extractor::from_safetensors(weights, DType::F32)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_finetune: f64,
    /// Discriminator learning rate as a fraction of the generator's.
    pub d_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub phase: Phase,
    pub max_iters: u64,
    pub seed: u64,
    pub weights: LossWeights,
    pub extractor: ExtractorSpec,
    /// Skip the discriminator update entirely.
    pub freeze_discriminator: bool,
    pub nan_guard: bool,
    /// Iterations between checkpoints during [`Trainer::run`]; 0 saves only
    /// at the end.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 6,
            lr_initial: 2e-4,
            lr_finetune: 5e-5,
            d_lr_ratio: 0.1,
            beta1: 0.5,
            beta2: 0.999,
            phase: Phase::Initial,
            max_iters: 500,
            seed: 0,
            weights: LossWeights::default(),
            extractor: ExtractorSpec::Random { seed: 0x5eed },
            freeze_discriminator: false,
            nan_guard: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be > 0".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_finetune > 0.0 && self.lr_finetune < self.lr_initial) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < lr_finetune < lr_initial, got {} / {}",
                self.lr_finetune, self.lr_initial
            )));
        }
        if !(self.d_lr_ratio > 0.0) {
            return Err(Error::InvalidConfig("d_lr_ratio must be > 0".into()));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("Adam beta {b} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn generator_lr(&self) -> f64 {
        match self.phase {
            Phase::Initial => self.lr_initial,
            Phase::Finetune => self.lr_finetune,
        }
    }

    pub fn discriminator_lr(&self) -> f64 {
        self.generator_lr() * self.d_lr_ratio
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    pub phase: Phase,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub loss_discriminator: f64,
    pub loss_rec: f64,
    pub loss_perc: f64,
    pub loss_style: f64,
    pub loss_adv: f64,
    pub loss_inter: f64,
    pub loss_total: f64,
    /// Mean known fraction of the input masks.
    pub mask_coverage: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn is_norm_param(name: &str) -> bool {
    name.contains(".bn.")
}

pub struct Trainer {
    config: TrainConfig,
    model: InpaintModel,
    generator_opt: Adam,
    discriminator_opt: Adam,
    extractor: Box<dyn FeatureExtractor>,
    iteration: u64,
    last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model_config: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = InpaintModel::new(model_config, config.seed)?;
        Self::with_model(model, config)
    }

    pub fn with_model(model: InpaintModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let extractor = config.extractor.build()?;
        Ok(Self {
            generator_opt: Adam::new(config.generator_lr(), config.beta1, config.beta2),
            discriminator_opt: Adam::new(config.discriminator_lr(), config.beta1, config.beta2),
            config,
            model,
            extractor,
            iteration: 0,
            last_checkpoint: None,
        })
    }

    /// Restores a run from a checkpoint. The phase comes from `config`, so a
    /// checkpoint of the initial phase can seed finetuning.
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        let model = ckpt.build_model()?;
        let mut trainer = Self::with_model(model, config)?;
        ckpt.optimizer_state(&mut trainer.generator_opt, &mut trainer.discriminator_opt)?;
        trainer.generator_opt.lr = trainer.config.generator_lr();
        trainer.discriminator_opt.lr = trainer.config.discriminator_lr();
        trainer.iteration = ckpt.meta.iteration;
        trainer.last_checkpoint = Some(path.to_path_buf());
        Ok(trainer)
    }

    pub fn model(&self) -> &InpaintModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &self.model,
            &self.generator_opt,
            &self.discriminator_opt,
            self.config.phase,
            self.iteration,
        )?;
        self.last_checkpoint = Some(path.to_path_buf());
        Ok(())
    }

    fn mode(&self) -> RunMode {
        match self.config.phase {
            Phase::Initial => RunMode::Train,
            Phase::Finetune => RunMode::TrainFrozenNorm,
        }
    }

    fn guard(&self, name: &str, value: f64) -> Result<()> {
        if self.config.nan_guard && !value.is_finite() {
            let last = self
                .last_checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into());
            return Err(Error::NonFinite {
                iteration: self.iteration,
                detail: format!("{name} = {value}; last good checkpoint: {last}"),
            });
        }
        Ok(())
    }

    /// One discriminator update on `(real, detached fake)` followed by one
    /// generator update on the joint loss.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let mode = self.mode();
        let input = &batch.input;
        let out = self.model.forward(input, mode)?;
        let weights = self.config.weights;

        // Fakes pair the generated edges with the grayscale of the composite.
        let gray_comp = composite(&crate::nn::luma(&out.image)?, &input.gray, &input.mask)?;
        let n = batch.len();

        let mut loss_d = 0.0;
        let d = self.model.discriminator();
        if !self.config.freeze_discriminator && weights.adv > 0.0 {
            let images = Tensor::cat(&[&batch.image_gt, &out.image.detach()], 0)?;
            let edges = Tensor::cat(&[&batch.edge_gt, &out.edge.detach()], 0)?;
            let grays = Tensor::cat(&[&batch.gray_gt, &gray_comp.detach()], 0)?;
            let scores = d.discriminate(&images, &edges, &grays, true)?;
            let real = scores.narrow(0, 0, n)?;
            let fake = scores.narrow(0, n, n)?;
            let (l_d, _) = adversarial_losses(&real, &fake, &fake)?;
            loss_d = scalar(&l_d)?;
            self.guard("discriminator loss", loss_d)?;
            let grads = l_d.backward()?;
            self.discriminator_opt
                .step(self.model.discriminator_params(), &grads, |_| true)?;
        }

        let adv = if weights.adv > 0.0 {
            let scores = d.discriminate(&out.image, &out.edge, &gray_comp, false)?;
            generator_adversarial_loss(&scores)?
        } else {
            Tensor::zeros((), out.image.dtype(), out.image.device())?
        };
        let terms = LossTerms {
            rec: reconstruction_loss(&out.image, &batch.image_gt)?,
            perc: perceptual_loss(&out.image, &batch.image_gt, self.extractor.as_ref())?,
            style: style_loss(&out.image, &batch.image_gt, self.extractor.as_ref())?,
            adv,
            inter: intermediate_loss(&out.edge_logits, &batch.edge_gt, &out.texture_preview, &batch.image_gt)?,
        };
        let total = joint_loss(&terms, &weights)?;
        let total_value = scalar(&total)?;
        self.guard("generator loss", total_value)?;
        let grads = total.backward()?;
        let freeze_norm = self.config.phase == Phase::Finetune;
        self.generator_opt
            .step(self.model.generator_params(), &grads, |name| !(freeze_norm && is_norm_param(name)))?;

        self.iteration += 1;
        Ok(StepRecord {
            iteration: self.iteration,
            phase: self.config.phase,
            lr_generator: self.generator_opt.lr,
            lr_discriminator: self.discriminator_opt.lr,
            loss_discriminator: loss_d,
            loss_rec: scalar(&terms.rec)?,
            loss_perc: scalar(&terms.perc)?,
            loss_style: scalar(&terms.style)?,
            loss_adv: scalar(&terms.adv)?,
            loss_inter: scalar(&terms.inter)?,
            loss_total: total_value,
            mask_coverage: mask_coverage(&input.mask)?,
        })
    }

    /// Trains until `max_iters`, appending one JSON record per step to `log`
    /// and checkpointing to `checkpoint` if given.
    pub fn run(&mut self, data: &[Sample], mut log: impl Write, checkpoint: Option<&Path>) -> Result<Vec<StepRecord>> {
        let mut records = Vec::new();
        while self.iteration < self.config.max_iters {
            let idx = batch_indices(self.config.seed, self.iteration, data.len(), self.config.batch_size);
            let samples: Vec<&Sample> = idx.iter().map(|i| &data[*i]).collect();
            let batch = Batch::from_samples(&samples, DType::F32)?;
            let rec = self.train_step(&batch)?;
            let line = serde_json::to_string(&rec).expect("record serialises");
            writeln!(log, "{line}").map_err(|e| Error::io("metrics log", e))?;
            records.push(rec);
            if let Some(path) = checkpoint {
                let every = self.config.checkpoint_every;
                if every > 0 && self.iteration % every == 0 {
                    self.save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(records)
    }
}

/// Sample indices of the batch at `iteration`, a pure function of
/// `(seed, iteration)` so resumed runs see the same batches.
pub fn batch_indices(seed: u64, iteration: u64, n: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    if batch_size <= n {
        rand::seq::index::sample(&mut rng, n, batch_size).into_vec()
    } else {
        use rand::Rng;
        (0..batch_size).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Mean absolute error over hole pixels of the generator output, eval mode.
pub fn hole_l1(model: &InpaintModel, data: &[Sample]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0.0;
    for chunk in data.chunks(8) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs, DType::F32)?;
        let out = model.forward(&batch.input, RunMode::Eval)?;
        let hole = batch.input.mask.affine(-1.0, 1.0)?;
        let err = (&out.image - &batch.image_gt)?.abs()?.broadcast_mul(&hole)?;
        sum += scalar(&err.sum_all()?)?;
        count += scalar(&hole.sum_all()?)? * 3.0;
    }
    Ok(if count > 0.0 { sum / count } else { 0.0 })
}
