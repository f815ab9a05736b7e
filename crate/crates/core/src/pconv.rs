//! Partial convolution with mask update.
//!
//! Each output window is computed only from the known pixels it covers and
//! rescaled by `window / known`, where `window` counts the in-image
//! positions of the window and `known` the in-image positions marked 1 in
//! the mask. Windows with no known pixel produce 0 (bias included) and stay
//! unknown in the updated mask; every other window becomes known.
//!
//! The mask is a single channel broadcast over the input channels, so the
//! channel factor of `k·k·C` cancels between numerator and denominator.

use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{conv2d, ConvOpts, Init};

/// Geometry of a partial convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartialConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl PartialConvSpec {
    /// Odd kernel with "same" padding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            bias: true,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn opts(&self) -> ConvOpts {
        ConvOpts {
            stride: self.stride,
            padding: self.padding,
            dilation: 1,
            bias: self.bias,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(format!("degenerate partial conv {self:?}")));
        }
        Ok(())
    }
}

/// Trainable partial convolution layer.
#[derive(Clone)]
pub struct PartialConv2d {
    spec: PartialConvSpec,
    weight: Var,
    bias: Option<Var>,
}

impl PartialConv2d {
    pub fn new(init: &mut Init, spec: PartialConvSpec) -> Result<Self> {
        spec.validate()?;
        let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let weight = init.uniform(
            "weight",
            (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel),
            bound,
        )?;
        let bias = if spec.bias {
            Some(init.uniform("bias", spec.out_channels, bound)?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    /// Wraps existing tensors, e.g. for tests against a reference.
    pub fn from_tensors(spec: PartialConvSpec, weight: &Tensor, bias: Option<&Tensor>) -> Result<Self> {
        spec.validate()?;
        let expected = [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel];
        if weight.dims() != expected {
            return Err(Error::Shape(format!(
                "weight {:?} does not match spec {:?}",
                weight.dims(),
                expected
            )));
        }
        if spec.bias != bias.is_some() {
            return Err(Error::InvalidConfig("bias presence does not match spec".into()));
        }
        Ok(Self {
            spec,
            weight: Var::from_tensor(weight)?,
            bias: bias.map(Var::from_tensor).transpose()?,
        })
    }

    pub fn spec(&self) -> &PartialConvSpec {
        &self.spec
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        partial_conv(
            x,
            mask,
            self.weight.as_tensor(),
            self.bias.as_ref().map(|b| b.as_tensor()),
            &self.spec,
        )
    }
}

/// Partial convolution of `x` `(B, C, H, W)` under `mask` `(B, 1, H, W)`.
///
/// Returns the features and the updated mask. The mask path carries no
/// gradient.
pub fn partial_conv(
    x: &Tensor,
    mask: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &PartialConvSpec,
) -> Result<(Tensor, Tensor)> {
    let (b, c, h, w) = x.dims4()?;
    let (mb, mc, mh, mw) = mask.dims4()?;
    if c != spec.in_channels {
        return Err(Error::InvalidInput(format!(
            "partial conv expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    if mc != 1 || mb != b || mh != h || mw != w {
        return Err(Error::InvalidInput(format!(
            "mask shape {:?} incompatible with input {:?}",
            mask.dims(),
            x.dims()
        )));
    }
    let k = spec.kernel;
    let mask = mask.detach();
    let ones_kernel = Tensor::ones((1, 1, k, k), mask.dtype(), mask.device())?;
    let known = mask.conv2d(&ones_kernel, spec.padding, spec.stride, 1, 1)?;
    let window = mask
        .ones_like()?
        .conv2d(&ones_kernel, spec.padding, spec.stride, 1, 1)?;
    let new_mask = known.gt(0.5)?.to_dtype(mask.dtype())?;
    let ratio = ((window / known.maximum(1.0)?)? * &new_mask)?;

    let masked = x.broadcast_mul(&mask)?;
    let raw = conv2d(&masked, weight, None, spec.opts().bias(false))?;
    let mut y = raw.broadcast_mul(&ratio)?;
    if let Some(bias) = bias {
        let bias = bias.reshape((1, spec.out_channels, 1, 1))?;
        y = (y + bias.broadcast_mul(&new_mask)?)?;
    }
    Ok((y, new_mask))
}

/// Fraction of known pixels.
pub fn mask_coverage(mask: &Tensor) -> Result<f64> {
    Ok(mask
        .to_dtype(DType::F64)?
        .flatten_all()?
        .mean_all()?
        .to_scalar::<f64>()?)
}

/// Coverage after 2x2 max-pooling: the fraction a stride-2 layer would see
/// known if it only needed one known pixel per output cell.
pub fn pooled_coverage(mask: &Tensor) -> Result<f64> {
    let pooled = mask.max_pool2d(2)?;
    mask_coverage(&pooled)
}
