//! Contextual feature aggregation.
//!
//! Every 3x3 feature patch attends to every other patch by cosine
//! similarity; the softmax-weighted patches are pasted back by overlap-add
//! and then refined by four dilated convolutions mixed through pixel-wise
//! weight maps that form a simplex at every pixel.
//!
//! No mask is needed here: the partial convolutions upstream have already
//! filled the holes with features.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{softmax, Conv2d, ConvOpts, ConvTranspose2d, Init};

/// Dilation rates of the aggregation branches.
pub const DILATIONS: [usize; 4] = [1, 2, 4, 8];

/// Regulariser inside the patch norms: `sqrt(|f|^2 + EPS^2)`.
pub const NORM_EPS: f64 = 1e-8;

/// Patch vectors `(B, H·W, C·9)` of all 3x3 windows, stride 1, with the
/// border replicated by one pixel so that a constant map has identical
/// patches everywhere.
///
/// Within a patch vector the channel index varies slowest and the window
/// offset (row-major over the 3x3 window) fastest.
pub fn extract_patches(f: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = f.dims4()?;
    let padded = f.pad_with_same(2, 1, 1)?.pad_with_same(3, 1, 1)?;
    let mut shifted = Vec::with_capacity(9);
    for dy in 0..3 {
        for dx in 0..3 {
            shifted.push(padded.narrow(2, dy, h)?.narrow(3, dx, w)?);
        }
    }
    let stacked = Tensor::stack(&shifted, 2)?; // (B, C, 9, H, W)
    Ok(stacked.reshape((b, c * 9, h * w))?.transpose(1, 2)?.contiguous()?)
}

/// Overlap-add of patch vectors `(B, H·W, C·9)` back onto a `(B, C, H, W)`
/// map, without normalisation.
pub fn fold_patches(patches: &Tensor, channels: usize, h: usize, w: usize) -> Result<Tensor> {
    let (b, n, cp) = patches.dims3()?;
    if n != h * w || cp != channels * 9 {
        return Err(Error::Shape(format!(
            "patches {:?} do not match a {channels}x{h}x{w} map",
            patches.dims()
        )));
    }
    let grid = patches
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, channels, 9, h, w))?;
    let mut acc: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let part = grid
                .narrow(2, dy * 3 + dx, 1)?
                .squeeze(2)?
                .pad_with_zeros(2, dy, 2 - dy)?
                .pad_with_zeros(3, dx, 2 - dx)?;
            acc = Some(match acc {
                Some(a) => (a + part)?,
                None => part,
            });
        }
    }
    let acc = acc.expect("nine offsets");
    Ok(acc.narrow(2, 1, h)?.narrow(3, 1, w)?)
}

/// Number of in-image patches covering each pixel, shape `(1, 1, H, W)`.
fn coverage_counts(h: usize, w: usize, like: &Tensor) -> Result<Tensor> {
    let ones = Tensor::ones((1, 1, h, w), like.dtype(), like.device())?;
    let k = Tensor::ones((1, 1, 3, 3), like.dtype(), like.device())?;
    Ok(ones.conv2d(&k, 1, 1, 1, 1)?)
}

/// Row-stochastic attention `(B, N, N)` between all 3x3 patches of `f`.
pub fn attention_scores(f: &Tensor) -> Result<Tensor> {
    let patches = extract_patches(f)?;
    let norms = (patches.sqr()?.sum_keepdim(D::Minus1)? + NORM_EPS * NORM_EPS)?.sqrt()?;
    let unit = patches.broadcast_div(&norms)?;
    let cosine = unit.matmul(&unit.transpose(1, 2)?.contiguous()?)?;
    softmax(&cosine, 2)
}

/// Rebuilds the map from attention-weighted patches, normalising each
/// pixel by the number of patches that cover it.
pub fn reconstruct(f: &Tensor, scores: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = f.dims4()?;
    let n = h * w;
    if scores.dims() != [b, n, n] {
        return Err(Error::Shape(format!(
            "scores {:?} do not match {n} patches",
            scores.dims()
        )));
    }
    let patches = extract_patches(f)?;
    let mixed = scores.matmul(&patches)?;
    let summed = fold_patches(&mixed, c, h, w)?;
    Ok(summed.broadcast_div(&coverage_counts(h, w, f)?)?)
}

/// Dilated branches plus the pixel-wise weight-map generator.
#[derive(Clone)]
pub struct MultiScale {
    branches: Vec<Conv2d>,
    weight_hidden: Conv2d,
    weight_out: Conv2d,
}

impl MultiScale {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        let c = channels;
        let mut branches = Vec::with_capacity(DILATIONS.len());
        for d in DILATIONS {
            branches.push(Conv2d::new(
                &mut init.pp(format!("branch{d}")),
                c,
                c,
                3,
                ConvOpts::same(3).dilation(d).padding(d),
            )?);
        }
        let weight_hidden = Conv2d::new(&mut init.pp("weights.hidden"), c, c, 3, ConvOpts::same(3))?;
        let weight_out = Conv2d::new(&mut init.pp("weights.out"), c, DILATIONS.len(), 1, ConvOpts::same(1))?;
        Ok(Self {
            branches,
            weight_hidden,
            weight_out,
        })
    }

    pub fn branches(&self) -> &[Conv2d] {
        &self.branches
    }

    /// The two convolutions of the weight-map generator.
    pub fn weight_generator(&self) -> (&Conv2d, &Conv2d) {
        (&self.weight_hidden, &self.weight_out)
    }

    /// Pixel-wise weight maps `(B, 4, H, W)`, softmax over the channel axis.
    pub fn weight_maps(&self, f_rec: &Tensor) -> Result<Tensor> {
        let hidden = self.weight_hidden.forward(f_rec)?.relu()?;
        let logits = self.weight_out.forward(&hidden)?.relu()?;
        softmax(&logits, 1)
    }

    /// Weighted sum of the dilated branch outputs.
    pub fn aggregate(&self, f_rec: &Tensor) -> Result<Tensor> {
        let weights = self.weight_maps(f_rec)?;
        let mut acc: Option<Tensor> = None;
        for (k, branch) in self.branches.iter().enumerate() {
            let term = branch.forward(f_rec)?.broadcast_mul(&weights.narrow(1, k, 1)?)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        Ok(acc.expect("four branches"))
    }
}

/// Parameters of the aggregation module for `C`-channel features.
#[derive(Clone)]
pub struct Cfa {
    down: Conv2d,
    up: ConvTranspose2d,
    multiscale: Option<MultiScale>,
    merge: Conv2d,
    channels: usize,
}

impl Cfa {
    /// With `multiscale == false` the reconstructed map is used directly
    /// (single-scale contextual attention).
    pub fn new(init: &mut Init, channels: usize, multiscale: bool) -> Result<Self> {
        let c = channels;
        let down = Conv2d::new(&mut init.pp("down"), c, c, 3, ConvOpts::same(3).stride(2))?;
        let up = ConvTranspose2d::new(&mut init.pp("up"), c, c, 4, 2, 1)?;
        let multiscale = if multiscale {
            Some(MultiScale::new(&mut init.pp("aggregate"), c)?)
        } else {
            None
        };
        let merge = Conv2d::new(&mut init.pp("merge"), 2 * c, c, 1, ConvOpts::same(1))?;
        Ok(Self {
            down,
            up,
            multiscale,
            merge,
            channels,
        })
    }

    pub fn multiscale(&self) -> Option<&MultiScale> {
        self.multiscale.as_ref()
    }

    pub fn aggregate(&self, f_rec: &Tensor) -> Result<Tensor> {
        match &self.multiscale {
            Some(m) => m.aggregate(f_rec),
            None => Err(Error::InvalidConfig("aggregation branches disabled (fixed-scale mode)".into())),
        }
    }

    /// Half-resolution attention, optional multi-scale aggregation, back to
    /// full resolution, then merged with the input through a 1x1 conv.
    pub fn forward(&self, f_in: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = f_in.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "aggregation built for {} channels, got {c}",
                self.channels
            )));
        }
        let padded = f_in.pad_with_zeros(2, 0, h % 2)?.pad_with_zeros(3, 0, w % 2)?;
        let low = self.down.forward(&padded)?;
        let scores = attention_scores(&low)?;
        let rec = reconstruct(&low, &scores)?;
        let refined = match &self.multiscale {
            Some(m) => m.aggregate(&rec)?,
            None => rec,
        };
        let up = self.up.forward(&refined)?.narrow(2, 0, h)?.narrow(3, 0, w)?;
        self.merge.forward(&Tensor::cat(&[&up, f_in], 1)?)
    }
}
