//! Generator and discriminator bundled with their parameter stores.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::datapipe::Batch;
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::Result;
use crate::generator::{composite, Generator, GeneratorConfig, GeneratorInput, GeneratorOutput};
use crate::nn::{seeded_rng, Init, ParamStore, RunMode};

/// Everything needed to rebuild the networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl ModelConfig {
    /// Narrow networks sized for `image_size`.
    pub fn desk(image_size: usize) -> Self {
        Self {
            image_size,
            generator: GeneratorConfig::desk(image_size),
            discriminator: DiscriminatorConfig::desk(),
        }
    }

    /// Full-width networks sized for `image_size`.
    pub fn full(image_size: usize) -> Self {
        Self {
            image_size,
            generator: GeneratorConfig::for_resolution(image_size),
            discriminator: DiscriminatorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.generator.check_resolution(self.image_size, self.image_size)
    }
}

pub struct InpaintModel {
    config: ModelConfig,
    generator: Generator,
    generator_params: ParamStore,
    discriminator: Discriminator,
    discriminator_params: ParamStore,
}

/// Generator results plus the composite.
pub struct Inpainted {
    pub output: GeneratorOutput,
    pub composite: Tensor,
}

impl InpaintModel {
    /// Fresh networks initialised from `seed`; training runs in f32.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    pub fn with_dtype(config: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut generator_params = ParamStore::new();
        let generator = Generator::new(&mut Init::new(&mut generator_params, &mut rng, dtype), &config.generator)?;
        let mut discriminator_params = ParamStore::new();
        let discriminator = Discriminator::new(
            &mut Init::new(&mut discriminator_params, &mut rng, dtype),
            &config.discriminator,
        )?;
        Ok(Self {
            config: config.clone(),
            generator,
            generator_params,
            discriminator,
            discriminator_params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn generator_params(&self) -> &ParamStore {
        &self.generator_params
    }

    pub fn discriminator_params(&self) -> &ParamStore {
        &self.discriminator_params
    }

    pub fn forward(&self, input: &GeneratorInput, mode: RunMode) -> Result<GeneratorOutput> {
        self.generator.forward(input, mode)
    }

    /// Eval-mode generation and compositing.
    pub fn inpaint(&self, input: &GeneratorInput) -> Result<Inpainted> {
        let output = self.generator.forward(input, RunMode::Eval)?;
        let composite = composite(&output.image, &input.image, &input.mask)?;
        Ok(Inpainted { output, composite })
    }

    pub fn inpaint_batch(&self, batch: &Batch) -> Result<Inpainted> {
        self.inpaint(&batch.input)
    }
}
