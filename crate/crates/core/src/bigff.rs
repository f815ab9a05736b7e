//! Bi-directional gated feature fusion.
//!
//! Two learned sigmoid gates decide how much texture information flows into
//! the structure features and vice versa. The exchange is scaled by two
//! scalars that start at zero, so a fresh module is plain concatenation.

use candle_core::{Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Conv2d, ConvOpts, Init};

/// Gated exchange between texture and structure features of `C` channels
/// each. Output has `2C` channels ordered structure-then-texture.
#[derive(Clone)]
pub struct BiGff {
    /// Produces the texture gate from `concat(F_t, F_s)`.
    gate_texture: Conv2d,
    /// Produces the structure gate from `concat(F_t, F_s)`.
    gate_structure: Conv2d,
    alpha: Var,
    beta: Var,
    channels: usize,
}

/// Intermediate values of one fusion, for inspection.
pub struct FusionTrace {
    pub fused: Tensor,
    pub texture_gate: Tensor,
    pub structure_gate: Tensor,
}

impl BiGff {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        let gate_texture = Conv2d::new(&mut init.pp("g"), 2 * channels, channels, 3, ConvOpts::same(3))?;
        let gate_structure = Conv2d::new(&mut init.pp("h"), 2 * channels, channels, 3, ConvOpts::same(3))?;
        let alpha = init.constant("alpha", 1, 0.0)?;
        let beta = init.constant("beta", 1, 0.0)?;
        Ok(Self {
            gate_texture,
            gate_structure,
            alpha,
            beta,
            channels,
        })
    }

    /// Builds a module from explicit pieces (tests, weight surgery).
    pub fn from_parts(gate_texture: Conv2d, gate_structure: Conv2d, alpha: Var, beta: Var) -> Result<Self> {
        let channels = gate_texture.weight().dim(0)?;
        Ok(Self {
            gate_texture,
            gate_structure,
            alpha,
            beta,
            channels,
        })
    }

    pub fn alpha(&self) -> &Var {
        &self.alpha
    }

    pub fn beta(&self) -> &Var {
        &self.beta
    }

    pub fn gate_texture(&self) -> &Conv2d {
        &self.gate_texture
    }

    pub fn gate_structure(&self) -> &Conv2d {
        &self.gate_structure
    }

    pub fn fuse(&self, texture: &Tensor, structure: &Tensor) -> Result<Tensor> {
        Ok(self.fuse_traced(texture, structure)?.fused)
    }

    pub fn fuse_traced(&self, texture: &Tensor, structure: &Tensor) -> Result<FusionTrace> {
        if texture.dims() != structure.dims() {
            return Err(Error::Shape(format!(
                "texture {:?} and structure {:?} features differ",
                texture.dims(),
                structure.dims()
            )));
        }
        if texture.dim(1)? != self.channels {
            return Err(Error::Shape(format!(
                "fusion built for {} channels, got {}",
                self.channels,
                texture.dim(1)?
            )));
        }
        let both = Tensor::cat(&[texture, structure], 1)?;
        let texture_gate = sigmoid(&self.gate_texture.forward(&both)?)?;
        let structure_gate = sigmoid(&self.gate_structure.forward(&both)?)?;

        let structure_out = (texture_gate.mul(texture)?.broadcast_mul(self.alpha.as_tensor())? + structure)?;
        let texture_out = (structure_gate.mul(structure)?.broadcast_mul(self.beta.as_tensor())? + texture)?;
        let fused = Tensor::cat(&[&structure_out, &texture_out], 1)?;
        Ok(FusionTrace {
            fused,
            texture_gate,
            structure_gate,
        })
    }
}

/// Ablation stand-in: concatenation followed by one 3x3 convolution.
#[derive(Clone)]
pub struct ConcatFusion {
    conv: Conv2d,
}

impl ConcatFusion {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&mut init.pp("conv"), 2 * channels, 2 * channels, 3, ConvOpts::same(3))?,
        })
    }

    pub fn fuse(&self, texture: &Tensor, structure: &Tensor) -> Result<Tensor> {
        let both = Tensor::cat(&[structure, texture], 1)?;
        self.conv.forward(&both)
    }
}
