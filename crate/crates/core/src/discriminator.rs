//! Two-branch patch discriminator with spectral normalisation.
//!
//! The texture branch scores the image. The structure branch first runs a
//! residual block and a 1x1 conv over `concat(edge, gray)`, then follows the
//! same five-conv pattern. Their sigmoid score maps are concatenated along
//! the channel axis.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv2d, leaky_relu, sigmoid, ConvOpts, Init};

/// Slope of every LeakyReLU in the discriminator.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Widths of the first four convs of each branch; the fifth emits 1.
    pub channels: [usize; 4],
    /// Width of the residual edge head of the structure branch.
    pub edge_channels: usize,
    pub spectral_norm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: [64, 128, 256, 256],
            edge_channels: 64,
            spectral_norm: true,
        }
    }
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        Self {
            channels: [16, 32, 64, 64],
            edge_channels: 16,
            spectral_norm: true,
        }
    }
}

/// One power-iteration refinement of the leading singular vectors of `w`
/// `(rows, cols)` starting from `u` `(rows)`.
///
/// Returns `(w / sigma, u_next, sigma)`. `u` and `v` carry no gradient;
/// `sigma = u^T W v` does, so the normalised weight is differentiable in `w`.
pub fn spectral_normalize(w: &Tensor, u: &Tensor, iterations: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let (rows, cols) = w.dims2()?;
    if u.dims() != [rows] {
        return Err(Error::Shape(format!("u has shape {:?}, expected [{rows}]", u.dims())));
    }
    let wd = w.detach();
    let mut u = u.detach().reshape((rows, 1))?;
    let mut v = Tensor::zeros((cols, 1), w.dtype(), w.device())?;
    for _ in 0..iterations.max(1) {
        v = l2_normalize(&wd.t()?.matmul(&u)?)?;
        u = l2_normalize(&wd.matmul(&v)?)?;
    }
    let sigma = u.t()?.matmul(&w.matmul(&v)?)?.reshape(())?;
    let normalized = w.broadcast_div(&sigma)?;
    Ok((normalized, u.reshape(rows)?, sigma))
}

fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_all()? + 1e-24)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// Conv layer whose weight is divided by its spectral norm estimate.
#[derive(Clone)]
pub struct SpectralConv2d {
    weight: Var,
    bias: Var,
    u: Option<Var>,
    opts: ConvOpts,
}

impl SpectralConv2d {
    pub fn new(init: &mut Init, in_c: usize, out_c: usize, kernel: usize, opts: ConvOpts, spectral: bool) -> Result<Self> {
        let bound = 1.0 / ((in_c * kernel * kernel) as f64).sqrt();
        let weight = init.uniform("weight", (out_c, in_c, kernel, kernel), bound)?;
        let bias = init.uniform("bias", out_c, bound)?;
        let u = if spectral { Some(init.unit_buffer("sn_u", out_c)?) } else { None };
        Ok(Self { weight, bias, u, opts })
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    /// Weight as used in the forward pass. With `update` the stored `u`
    /// advances by one power iteration.
    pub fn effective_weight(&self, update: bool) -> Result<Tensor> {
        let w = self.weight.as_tensor();
        let Some(u) = &self.u else {
            return Ok(w.clone());
        };
        let dims = w.dims4()?;
        let flat = w.reshape((dims.0, dims.1 * dims.2 * dims.3))?;
        let (normalized, u_next, _) = spectral_normalize(&flat, u.as_tensor(), 1)?;
        if update {
            u.set(&u_next)?;
        }
        Ok(normalized.reshape(dims)?)
    }

    pub fn forward(&self, x: &Tensor, update: bool) -> Result<Tensor> {
        let w = self.effective_weight(update)?;
        conv2d(x, &w, Some(self.bias.as_tensor()), self.opts)
    }
}

#[derive(Clone)]
struct Branch {
    convs: Vec<SpectralConv2d>,
}

impl Branch {
    fn new(init: &mut Init, in_c: usize, cfg: &DiscriminatorConfig) -> Result<Self> {
        let widths = [cfg.channels[0], cfg.channels[1], cfg.channels[2], cfg.channels[3], 1];
        let strides = [2, 2, 2, 1, 1];
        let mut convs = Vec::with_capacity(5);
        let mut prev = in_c;
        for (i, (w, s)) in widths.iter().zip(strides).enumerate() {
            let opts = ConvOpts::same(4).stride(s).padding(1);
            convs.push(SpectralConv2d::new(&mut init.pp(format!("conv{i}")), prev, *w, 4, opts, cfg.spectral_norm)?);
            prev = *w;
        }
        Ok(Self { convs })
    }

    fn forward(&self, x: &Tensor, update: bool) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h, update)?;
            h = if i == last { sigmoid(&h)? } else { leaky_relu(&h, LEAKY_SLOPE)? };
        }
        Ok(h)
    }
}

/// Residual block (two 3x3 convs, 1x1 projection shortcut since the input
/// has 2 channels) followed by a 1x1 conv.
#[derive(Clone)]
struct EdgeHead {
    conv_a: SpectralConv2d,
    conv_b: SpectralConv2d,
    shortcut: SpectralConv2d,
    out: SpectralConv2d,
}

impl EdgeHead {
    fn new(init: &mut Init, in_c: usize, width: usize, spectral: bool) -> Result<Self> {
        Ok(Self {
            conv_a: SpectralConv2d::new(&mut init.pp("res.conv_a"), in_c, width, 3, ConvOpts::same(3), spectral)?,
            conv_b: SpectralConv2d::new(&mut init.pp("res.conv_b"), width, width, 3, ConvOpts::same(3), spectral)?,
            shortcut: SpectralConv2d::new(&mut init.pp("res.shortcut"), in_c, width, 1, ConvOpts::same(1), spectral)?,
            out: SpectralConv2d::new(&mut init.pp("out"), width, width, 1, ConvOpts::same(1), spectral)?,
        })
    }

    fn forward(&self, x: &Tensor, update: bool) -> Result<Tensor> {
        let h = leaky_relu(&self.conv_a.forward(x, update)?, LEAKY_SLOPE)?;
        let h = self.conv_b.forward(&h, update)?;
        let r = leaky_relu(&(h + self.shortcut.forward(x, update)?)?, LEAKY_SLOPE)?;
        leaky_relu(&self.out.forward(&r, update)?, LEAKY_SLOPE)
    }
}

#[derive(Clone)]
pub struct Discriminator {
    texture: Branch,
    edge_head: EdgeHead,
    structure: Branch,
    config: DiscriminatorConfig,
}

impl Discriminator {
    pub fn new(init: &mut Init, config: &DiscriminatorConfig) -> Result<Self> {
        Ok(Self {
            texture: Branch::new(&mut init.pp("texture"), 3, config)?,
            edge_head: EdgeHead::new(&mut init.pp("structure.edge"), 2, config.edge_channels, config.spectral_norm)?,
            structure: Branch::new(&mut init.pp("structure"), config.edge_channels, config)?,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Spatial size of the score map for a square input of side `size`.
    pub fn output_size(size: usize) -> usize {
        let mut s = size;
        for stride in [2, 2, 2, 1, 1] {
            s = (s + 2 - 4) / stride + 1;
        }
        s
    }

    /// Score map `(B, 2, h, w)` in `(0, 1)`: channel 0 texture, channel 1
    /// structure. `update_sn` advances the spectral-norm power iteration.
    pub fn discriminate(&self, image: &Tensor, edge: &Tensor, gray: &Tensor, update_sn: bool) -> Result<Tensor> {
        let (b, c, h, w) = image.dims4()?;
        if c != 3 {
            return Err(Error::InvalidInput(format!("discriminator image needs 3 channels, got {c}")));
        }
        if edge.dims() != [b, 1, h, w] || gray.dims() != [b, 1, h, w] {
            return Err(Error::Shape(format!(
                "edge {:?} / gray {:?} do not match image {:?}",
                edge.dims(),
                gray.dims(),
                image.dims()
            )));
        }
        let t = self.texture.forward(image, update_sn)?;
        let e = self.edge_head.forward(&Tensor::cat(&[edge, gray], 1)?, update_sn)?;
        let s = self.structure.forward(&e, update_sn)?;
        Ok(Tensor::cat(&[&t, &s], 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{seeded_rng, ParamStore};
    use candle_core::{DType, Device};

    #[test]
    fn diagonal_matrix_converges_to_largest_entry() {
        let dev = Device::Cpu;
        let w = Tensor::new(&[[3.0f64, 0.0], [0.0, 1.0]], &dev).unwrap();
        let u = Tensor::new(&[0.6f64, 0.8], &dev).unwrap();
        let (normalized, _, sigma) = spectral_normalize(&w, &u, 60).unwrap();
        assert!((sigma.to_scalar::<f64>().unwrap() - 3.0).abs() < 1e-9);
        let n: Vec<Vec<f64>> = normalized.to_vec2().unwrap();
        assert!((n[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_is_unchanged() {
        let dev = Device::Cpu;
        let w = Tensor::eye(4, DType::F64, &dev).unwrap();
        let u = Tensor::new(&[0.5f64, 0.5, 0.5, 0.5], &dev).unwrap();
        let (normalized, _, sigma) = spectral_normalize(&w, &u, 1).unwrap();
        assert!((sigma.to_scalar::<f64>().unwrap() - 1.0).abs() < 1e-12);
        let d = (normalized - &w).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn score_map_shape_and_range() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(1);
        let d = Discriminator::new(&mut Init::new(&mut store, &mut rng, DType::F32), &DiscriminatorConfig::desk()).unwrap();
        let dev = Device::Cpu;
        let img = Tensor::rand(0f32, 1f32, (2, 3, 64, 64), &dev).unwrap();
        let edge = Tensor::rand(0f32, 1f32, (2, 1, 64, 64), &dev).unwrap();
        let gray = Tensor::rand(0f32, 1f32, (2, 1, 64, 64), &dev).unwrap();
        let s = d.discriminate(&img, &edge, &gray, false).unwrap();
        assert_eq!(s.dims(), &[2, 2, 6, 6]);
        assert_eq!(Discriminator::output_size(64), 6);
        let v: Vec<f32> = s.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|x| *x > 0.0 && *x < 1.0));
        let again = d.discriminate(&img, &edge, &gray, false).unwrap();
        assert_eq!(v, again.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    }
}
