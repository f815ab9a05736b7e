use candle_core::{Tensor, Var, D};

use super::params::Init;
use crate::error::{Error, Result};

/// How a forward pass treats normalisation statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Training with normalisation layers frozen: running statistics are
    /// used and never updated.
    TrainFrozenNorm,
    /// Inference.
    Eval,
}

impl RunMode {
    pub fn uses_batch_stats(self) -> bool {
        matches!(self, RunMode::Train)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl ConvOpts {
    /// Stride 1, "same" padding for an odd kernel, with bias.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
            bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }
}

/// Plain 2-D convolution, weight layout `(out, in, k, k)`.
#[derive(Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    opts: ConvOpts,
}

impl Conv2d {
    pub fn new(init: &mut Init, in_c: usize, out_c: usize, kernel: usize, opts: ConvOpts) -> Result<Self> {
        let bound = 1.0 / ((in_c * kernel * kernel) as f64).sqrt();
        let weight = init.uniform("weight", (out_c, in_c, kernel, kernel), bound)?;
        let bias = if opts.bias {
            Some(init.uniform("bias", out_c, bound)?)
        } else {
            None
        };
        Ok(Self { weight, bias, opts })
    }

    pub fn from_vars(weight: Var, bias: Option<Var>, opts: ConvOpts) -> Self {
        Self { weight, bias, opts }
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn opts(&self) -> ConvOpts {
        self.opts
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, self.weight.as_tensor(), self.bias.as_ref().map(|b| b.as_tensor()), self.opts)
    }
}

/// Convolution with explicit tensors; shared by the plain and the
/// spectrally-normalised layers.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, opts: ConvOpts) -> Result<Tensor> {
    let y = unfold_conv2d(x, weight, opts.padding, opts.stride, opts.dilation)?;
    match bias {
        Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?),
        None => Ok(y),
    }
}

/// Every `step`-th element of `dim`, starting at 0, given `len` output
/// positions.
fn take_strided(x: &Tensor, dim: usize, len: usize, step: usize) -> Result<Tensor> {
    if step == 1 {
        return Ok(x.narrow(dim, 0, len)?);
    }
    let avail = x.dim(dim)?;
    let x = if avail < len * step {
        x.pad_with_zeros(dim, 0, len * step - avail)?
    } else {
        x.narrow(dim, 0, len * step)?
    };
    let mut shape = x.dims().to_vec();
    shape[dim] = len;
    shape.insert(dim + 1, step);
    Ok(x.reshape(shape)?.narrow(dim + 1, 0, 1)?.squeeze(dim + 1)?)
}

/// Convolution as patch extraction plus one matmul. Same result as
/// `Tensor::conv2d`; its backward pass avoids the slow transposed
/// convolution on CPU.
pub fn unfold_conv2d(x: &Tensor, weight: &Tensor, padding: usize, stride: usize, dilation: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (o, ci, kh, kw) = weight.dims4()?;
    if ci != c {
        return Err(Error::Shape(format!("conv input has {c} channels, weight expects {ci}")));
    }
    let oh = (h + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
    let ow = (w + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
    let xp = if padding > 0 {
        x.pad_with_zeros(2, padding, padding)?.pad_with_zeros(3, padding, padding)?
    } else {
        x.clone()
    };
    let cols = if kh == 1 && kw == 1 {
        take_strided(&take_strided(&xp, 2, oh, stride)?, 3, ow, stride)?.reshape((b, c, oh * ow))?
    } else {
        let mut taps = Vec::with_capacity(kh * kw);
        for ky in 0..kh {
            let rows = xp.narrow(2, ky * dilation, xp.dim(2)? - ky * dilation)?;
            let rows = take_strided(&rows, 2, oh, stride)?;
            for kx in 0..kw {
                let t = rows.narrow(3, kx * dilation, rows.dim(3)? - kx * dilation)?;
                taps.push(take_strided(&t, 3, ow, stride)?);
            }
        }
        Tensor::stack(&taps, 2)?.reshape((b, c * kh * kw, oh * ow))?
    };
    let w2 = weight.reshape((o, c * kh * kw))?;
    Ok(w2.broadcast_matmul(&cols)?.reshape((b, o, oh, ow))?)
}

/// 2x2 max pooling, stride 2; a trailing odd row or column is dropped.
/// Built from a reshape and two reductions so its gradient routes to the
/// maximum of each window.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let x = x.narrow(2, 0, oh * 2)?.narrow(3, 0, ow * 2)?;
    Ok(x.reshape((b, c, oh, 2, ow, 2))?.max(5)?.max(3)?)
}

/// Transposed convolution, weight layout `(in, out, k, k)`.
#[derive(Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        init: &mut Init,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_c * kernel * kernel) as f64).sqrt();
        let weight = init.uniform("weight", (in_c, out_c, kernel, kernel), bound)?;
        let bias = init.uniform("bias", out_c, bound)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, c, 1, 1))?)?)
    }
}

/// Batch normalisation over `(N, H, W)` per channel.
#[derive(Clone)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant("gamma", channels, 1.0)?,
            beta: init.constant("beta", channels, 0.0)?,
            running_mean: init.buffer("running_mean", channels, 0.0)?,
            running_var: init.buffer("running_var", channels, 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: RunMode) -> Result<Tensor> {
        let c = self.gamma.dim(0)?;
        let (mean, var) = if mode.uses_batch_stats() {
            let (n, _, h, w) = x.dims4()?;
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;

            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.as_tensor().reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.as_tensor().reshape((1, c, 1, 1))?)?)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? * 0.5)?.affine(1.0, 0.5)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

/// Softmax along `dim` with max-subtraction.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(dim)?;
    Ok(e.broadcast_div(&s)?)
}

/// Softmax along the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Nearest-neighbour 2x upsampling built from broadcasts so that the
/// gradient accumulates correctly.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((b, c, 2 * h, 2 * w))?)
}

/// BT.601 luma of a `(B, 3, H, W)` tensor as `(B, 1, H, W)`.
pub fn luma(x: &Tensor) -> Result<Tensor> {
    let r = x.narrow(1, 0, 1)?;
    let g = x.narrow(1, 1, 1)?;
    let b = x.narrow(1, 2, 1)?;
    Ok((((r * 0.299)? + (g * 0.587)?)? + (b * 0.114)?)?)
}
