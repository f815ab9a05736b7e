//! Two-stream generator.
//!
//! A texture encoder reads the corrupted image, a structure encoder reads the
//! corrupted edge map stacked with the corrupted grayscale image. Both are
//! stacks of stride-2 partial convolutions. Each decoder level concatenates
//! the upsampled deeper output with the skip features of *both* encoders,
//! which is how each stream borrows from the other. The decoded maps go
//! through gated fusion and contextual aggregation before the image head.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::bigff::{BiGff, ConcatFusion};
use crate::cfa::Cfa;
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, sigmoid, upsample2x, BatchNorm2d, Conv2d, ConvOpts, Init, RunMode};
use crate::pconv::{PartialConv2d, PartialConvSpec};

pub const TEXTURE_IN_CHANNELS: usize = 3;
pub const STRUCTURE_IN_CHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Number of stride-2 encoder levels.
    pub levels: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Channel count of the decoded texture / structure maps.
    pub feature_channels: usize,
    /// `false` builds the widened single-stream multi-task baseline.
    pub two_stream: bool,
    /// Decoders see the opposite encoder's skips.
    pub cross_borrow: bool,
    pub use_bigff: bool,
    pub use_cfa: bool,
    pub multiscale_cfa: bool,
    pub batch_norm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            levels: 7,
            base_channels: 64,
            max_channels: 512,
            feature_channels: 64,
            two_stream: true,
            cross_borrow: true,
            use_bigff: true,
            use_cfa: true,
            multiscale_cfa: true,
            batch_norm: true,
        }
    }
}

impl GeneratorConfig {
    /// Full-width configuration with depth scaled to the image size
    /// (7 levels at 256, 5 at 64).
    pub fn for_resolution(size: usize) -> Self {
        Self {
            levels: levels_for(size),
            ..Self::default()
        }
    }

    /// Narrow configuration for CPU-sized experiments.
    pub fn desk(size: usize) -> Self {
        Self {
            levels: levels_for(size),
            base_channels: 16,
            max_channels: 64,
            feature_channels: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 3 {
            return Err(Error::InvalidConfig(format!("levels must be >= 3, got {}", self.levels)));
        }
        if self.base_channels == 0 || self.feature_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::InvalidConfig("channel widths must be positive and max >= base".into()));
        }
        Ok(())
    }

    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        let unit = 1usize << self.levels;
        if h % unit != 0 || w % unit != 0 || h < unit || w < unit {
            return Err(Error::InvalidInput(format!(
                "{h}x{w} input is not divisible by 2^{} = {unit}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Encoder output widths, level 1 first.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.levels)
            .map(|l| (self.base_channels << l.min(16)).min(self.max_channels))
            .collect()
    }

    fn kernel(level: usize) -> usize {
        match level {
            1 => 7,
            2 => 5,
            _ => 3,
        }
    }
}

fn levels_for(size: usize) -> usize {
    let log2 = usize::BITS - 1 - size.max(1).leading_zeros();
    (log2 as usize).saturating_sub(1).clamp(3, 7)
}

/// One partial-conv layer of a backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub batch_norm: bool,
}

impl LayerSpec {
    fn params(&self) -> usize {
        let weights = self.out_channels * self.in_channels * self.kernel * self.kernel;
        if self.batch_norm {
            weights + 2 * self.out_channels
        } else {
            weights + self.out_channels
        }
    }

    fn pconv(&self) -> PartialConvSpec {
        PartialConvSpec::new(self.in_channels, self.out_channels, self.kernel, self.stride).with_bias(!self.batch_norm)
    }
}

/// Layer tables of one encoder/decoder pair.
#[derive(Clone, Debug)]
struct StreamLayout {
    encoder: Vec<LayerSpec>,
    /// Decoder layers, deepest first; the last one produces full resolution.
    decoder: Vec<LayerSpec>,
}

fn stream_layout(
    in_channels: usize,
    widths: &[usize],
    out_channels: usize,
    own_skip: &dyn Fn(usize) -> usize,
    other_skip: &dyn Fn(usize) -> usize,
    batch_norm: bool,
) -> StreamLayout {
    let levels = widths.len();
    let encoder = (1..=levels)
        .map(|l| LayerSpec {
            in_channels: if l == 1 { in_channels } else { widths[l - 2] },
            out_channels: widths[l - 1],
            kernel: GeneratorConfig::kernel(l),
            stride: 2,
            batch_norm: batch_norm && l > 1,
        })
        .collect();
    let decoder = (0..levels)
        .rev()
        .map(|l| LayerSpec {
            in_channels: widths[l] + own_skip(l) + other_skip(l),
            out_channels: if l == 0 { out_channels } else { widths[l - 1] },
            kernel: 3,
            stride: 1,
            batch_norm: batch_norm && l > 0,
        })
        .collect();
    StreamLayout { encoder, decoder }
}

fn two_stream_layouts(cfg: &GeneratorConfig) -> (StreamLayout, StreamLayout) {
    let widths = cfg.encoder_channels();
    let skip = |input: usize| {
        let widths = widths.clone();
        move |l: usize| if l == 0 { input } else { widths[l - 1] }
    };
    let tex_skip = skip(TEXTURE_IN_CHANNELS);
    let str_skip = skip(STRUCTURE_IN_CHANNELS);
    let none = |_: usize| 0;
    let texture = stream_layout(
        TEXTURE_IN_CHANNELS,
        &widths,
        cfg.feature_channels,
        &tex_skip,
        if cfg.cross_borrow { &str_skip } else { &none },
        cfg.batch_norm,
    );
    let structure = stream_layout(
        STRUCTURE_IN_CHANNELS,
        &widths,
        cfg.feature_channels,
        &str_skip,
        if cfg.cross_borrow { &tex_skip } else { &none },
        cfg.batch_norm,
    );
    (texture, structure)
}

fn single_stream_layout(cfg: &GeneratorConfig, scale: f64) -> (StreamLayout, [LayerSpec; 2]) {
    let widths: Vec<usize> = cfg
        .encoder_channels()
        .iter()
        .map(|c| ((*c as f64 * scale).round() as usize).max(1))
        .collect();
    let shared_out = ((cfg.feature_channels as f64 * scale).round() as usize).max(1);
    let input = TEXTURE_IN_CHANNELS + STRUCTURE_IN_CHANNELS;
    let w = widths.clone();
    let own = move |l: usize| if l == 0 { input } else { w[l - 1] };
    let layout = stream_layout(input, &widths, shared_out, &own, &|_| 0, cfg.batch_norm);
    let tail = LayerSpec {
        in_channels: shared_out,
        out_channels: cfg.feature_channels,
        kernel: 3,
        stride: 1,
        batch_norm: false,
    };
    (layout, [tail, tail])
}

fn layout_params(layout: &StreamLayout) -> usize {
    layout.encoder.iter().chain(&layout.decoder).map(LayerSpec::params).sum()
}

/// Backbone parameter count (encoders, decoders, single-stream tails).
pub fn backbone_parameter_count(cfg: &GeneratorConfig) -> usize {
    if cfg.two_stream {
        let (t, s) = two_stream_layouts(cfg);
        layout_params(&t) + layout_params(&s)
    } else {
        let (layout, tails) = single_stream_layout(cfg, single_stream_scale(cfg));
        layout_params(&layout) + tails.iter().map(LayerSpec::params).sum::<usize>()
    }
}

/// Width multiplier that gives the single-stream baseline the same backbone
/// size as the two-stream model built from the same config.
pub fn single_stream_scale(cfg: &GeneratorConfig) -> f64 {
    let two = GeneratorConfig {
        two_stream: true,
        ..cfg.clone()
    };
    let (t, s) = two_stream_layouts(&two);
    let target = (layout_params(&t) + layout_params(&s)) as f64;
    let mut best = (f64::INFINITY, 1.0);
    let mut scale = 1.0;
    while scale <= 3.0 {
        let (layout, tails) = single_stream_layout(cfg, scale);
        let count = (layout_params(&layout) + tails.iter().map(LayerSpec::params).sum::<usize>()) as f64;
        let gap = (count - target).abs();
        if gap < best.0 {
            best = (gap, scale);
        }
        scale += 0.0005;
    }
    best.1
}

#[derive(Clone)]
struct Layer {
    conv: PartialConv2d,
    norm: Option<BatchNorm2d>,
}

impl Layer {
    fn new(init: &mut Init, spec: &LayerSpec) -> Result<Self> {
        let conv = PartialConv2d::new(&mut init.pp("conv"), spec.pconv())?;
        let norm = if spec.batch_norm {
            Some(BatchNorm2d::new(&mut init.pp("bn"), spec.out_channels)?)
        } else {
            None
        };
        Ok(Self { conv, norm })
    }

    fn forward(&self, x: &Tensor, mask: &Tensor, mode: RunMode) -> Result<(Tensor, Tensor)> {
        let (y, m) = self.conv.forward(x, mask)?;
        let y = match &self.norm {
            Some(bn) => bn.forward(&y, mode)?,
            None => y,
        };
        Ok((y, m))
    }
}

#[derive(Clone)]
struct Stream {
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
}

impl Stream {
    fn new(init: &mut Init, layout: &StreamLayout) -> Result<Self> {
        let encoder = layout
            .encoder
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::new(&mut init.pp(format!("enc{}", i + 1)), s))
            .collect::<Result<_>>()?;
        let levels = layout.decoder.len();
        let decoder = layout
            .decoder
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::new(&mut init.pp(format!("dec{}", levels - 1 - i)), s))
            .collect::<Result<_>>()?;
        Ok(Self { encoder, decoder })
    }

    fn encode(&self, x: &Tensor, mask: &Tensor, mode: RunMode) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let mut feats = Vec::with_capacity(self.encoder.len());
        let mut masks = Vec::with_capacity(self.encoder.len());
        let mut cur = x.clone();
        let mut cur_mask = mask.clone();
        for layer in &self.encoder {
            let (y, m) = layer.forward(&cur, &cur_mask, mode)?;
            let y = leaky_relu(&y, 0.2)?;
            feats.push(y.clone());
            masks.push(m.clone());
            cur = y;
            cur_mask = m;
        }
        Ok((feats, masks))
    }

    /// `skips[l]` are the tensors (and their masks) concatenated at
    /// decoder level `l`, level 0 being full resolution.
    fn decode(
        &self,
        deepest: &Tensor,
        deepest_mask: &Tensor,
        skips: &[Vec<(&Tensor, &Tensor)>],
        mode: RunMode,
        trace: &mut Vec<(Tensor, Tensor)>,
    ) -> Result<Tensor> {
        let mut cur = deepest.clone();
        let mut cur_mask = deepest_mask.clone();
        let levels = self.decoder.len();
        for (i, layer) in self.decoder.iter().enumerate() {
            let level = levels - 1 - i;
            let up = upsample2x(&cur)?;
            let mut mask = upsample2x(&cur_mask)?;
            let mut parts = vec![up];
            for (feat, m) in &skips[level] {
                parts.push((*feat).clone());
                mask = mask.maximum(*m)?;
            }
            let input = Tensor::cat(&parts, 1)?;
            let (y, m) = layer.forward(&input, &mask, mode)?;
            trace.push((mask, m.clone()));
            cur = y.relu()?;
            cur_mask = m;
        }
        Ok(cur)
    }
}

#[derive(Clone)]
enum Backbone {
    TwoStream { texture: Stream, structure: Stream },
    SingleStream { shared: Stream, texture_tail: Layer, structure_tail: Layer },
}

/// Residual block followed by a 1x1 projection.
#[derive(Clone)]
pub struct ProjectionHead {
    conv1: Conv2d,
    conv2: Conv2d,
    out: Conv2d,
    squash: bool,
}

impl ProjectionHead {
    pub fn new(init: &mut Init, channels: usize, out_channels: usize, squash: bool) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&mut init.pp("res.conv1"), channels, channels, 3, ConvOpts::same(3))?,
            conv2: Conv2d::new(&mut init.pp("res.conv2"), channels, channels, 3, ConvOpts::same(3))?,
            out: Conv2d::new(&mut init.pp("out"), channels, out_channels, 1, ConvOpts::same(1))?,
            squash,
        })
    }

    pub fn vars(&self) -> Vec<&Var> {
        let mut v = Vec::new();
        for c in [&self.conv1, &self.conv2, &self.out] {
            v.push(c.weight());
            if let Some(b) = c.bias() {
                v.push(b);
            }
        }
        v
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(f)?.relu()?;
        let r = (f + self.conv2.forward(&h)?)?.relu()?;
        let o = self.out.forward(&r)?;
        if self.squash {
            sigmoid(&o)
        } else {
            Ok(o)
        }
    }
}

#[derive(Clone)]
enum Fusion {
    Gated(BiGff),
    Concat(ConcatFusion),
}

/// Corrupted inputs of the generator, each `(B, C, H, W)`.
#[derive(Clone, Debug)]
pub struct GeneratorInput {
    pub image: Tensor,
    pub edge: Tensor,
    pub gray: Tensor,
    pub mask: Tensor,
}

/// Per-level encoder features of both streams.
#[derive(Clone, Debug)]
pub struct StreamFeatures {
    /// Texture encoder outputs, level 1 (H/2) first. In single-stream mode
    /// these are the shared encoder's outputs.
    pub texture_skips: Vec<Tensor>,
    /// Structure encoder outputs; empty in single-stream mode.
    pub structure_skips: Vec<Tensor>,
    /// Updated masks of the texture encoder, level 1 first.
    pub masks_per_level: Vec<Tensor>,
    /// Updated masks of the structure encoder.
    pub structure_masks: Vec<Tensor>,
    texture_input: Tensor,
    structure_input: Tensor,
    input_mask: Tensor,
}

/// Decoder outputs.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub texture: Tensor,
    pub structure: Tensor,
    /// `(input mask, output mask)` of every texture decoder layer, deepest
    /// first.
    pub decoder_masks: Vec<(Tensor, Tensor)>,
}

#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    /// Final image in `[0, 1]`.
    pub image: Tensor,
    /// Reconstructed edge probabilities.
    pub edge: Tensor,
    pub edge_logits: Tensor,
    /// Intermediate RGB projection of the texture features.
    pub texture_preview: Tensor,
    pub texture_features: Tensor,
    pub structure_features: Tensor,
}

#[derive(Clone)]
pub struct Generator {
    config: GeneratorConfig,
    backbone: Backbone,
    texture_head: ProjectionHead,
    structure_head: ProjectionHead,
    fusion: Fusion,
    cfa: Option<Cfa>,
    output: Conv2d,
}

impl Generator {
    pub fn new(init: &mut Init, config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let backbone = if config.two_stream {
            let (t, s) = two_stream_layouts(config);
            Backbone::TwoStream {
                texture: Stream::new(&mut init.pp("texture"), &t)?,
                structure: Stream::new(&mut init.pp("structure"), &s)?,
            }
        } else {
            let (layout, [tt, st]) = single_stream_layout(config, single_stream_scale(config));
            Backbone::SingleStream {
                shared: Stream::new(&mut init.pp("shared"), &layout)?,
                texture_tail: Layer::new(&mut init.pp("texture_tail"), &tt)?,
                structure_tail: Layer::new(&mut init.pp("structure_tail"), &st)?,
            }
        };
        let f = config.feature_channels;
        let texture_head = ProjectionHead::new(&mut init.pp("head.texture"), f, 3, true)?;
        let structure_head = ProjectionHead::new(&mut init.pp("head.structure"), f, 1, false)?;
        let fusion = if config.use_bigff {
            Fusion::Gated(BiGff::new(&mut init.pp("bigff"), f)?)
        } else {
            Fusion::Concat(ConcatFusion::new(&mut init.pp("fusion"), f)?)
        };
        let cfa = if config.use_cfa {
            Some(Cfa::new(&mut init.pp("cfa"), 2 * f, config.multiscale_cfa)?)
        } else {
            None
        };
        let output = Conv2d::new(&mut init.pp("output"), 2 * f, 3, 3, ConvOpts::same(3))?;
        Ok(Self {
            config: config.clone(),
            backbone,
            texture_head,
            structure_head,
            fusion,
            cfa,
            output,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn bigff(&self) -> Option<&BiGff> {
        match &self.fusion {
            Fusion::Gated(g) => Some(g),
            Fusion::Concat(_) => None,
        }
    }

    pub fn cfa(&self) -> Option<&Cfa> {
        self.cfa.as_ref()
    }

    pub fn texture_head(&self) -> &ProjectionHead {
        &self.texture_head
    }

    pub fn structure_head(&self) -> &ProjectionHead {
        &self.structure_head
    }

    fn check_input(&self, input: &GeneratorInput) -> Result<()> {
        let (b, c, h, w) = input.image.dims4()?;
        if c != 3 {
            return Err(Error::InvalidInput(format!("image must have 3 channels, got {c}")));
        }
        for (name, t) in [("edge", &input.edge), ("gray", &input.gray), ("mask", &input.mask)] {
            if t.dims() != [b, 1, h, w] {
                return Err(Error::Shape(format!("{name} is {:?}, expected {:?}", t.dims(), [b, 1, h, w])));
            }
        }
        self.config.check_resolution(h, w)
    }

    pub fn encode(&self, input: &GeneratorInput, mode: RunMode) -> Result<StreamFeatures> {
        self.check_input(input)?;
        let structure_input = Tensor::cat(&[&input.edge, &input.gray], 1)?;
        match &self.backbone {
            Backbone::TwoStream { texture, structure } => {
                let (tf, tm) = texture.encode(&input.image, &input.mask, mode)?;
                let (sf, sm) = structure.encode(&structure_input, &input.mask, mode)?;
                Ok(StreamFeatures {
                    texture_skips: tf,
                    structure_skips: sf,
                    masks_per_level: tm,
                    structure_masks: sm,
                    texture_input: input.image.clone(),
                    structure_input,
                    input_mask: input.mask.clone(),
                })
            }
            Backbone::SingleStream { shared, .. } => {
                let joint = Tensor::cat(&[&input.image, &structure_input], 1)?;
                let (f, m) = shared.encode(&joint, &input.mask, mode)?;
                Ok(StreamFeatures {
                    texture_skips: f,
                    structure_skips: Vec::new(),
                    masks_per_level: m,
                    structure_masks: Vec::new(),
                    texture_input: joint,
                    structure_input,
                    input_mask: input.mask.clone(),
                })
            }
        }
    }

    pub fn decode(&self, feats: &StreamFeatures, mode: RunMode) -> Result<Decoded> {
        let levels = self.config.levels;
        let level_skips = |own: &[Tensor], own_masks: &[Tensor], own_in: &Tensor| -> Vec<(Tensor, Tensor)> {
            let mut v = vec![(own_in.clone(), feats.input_mask.clone())];
            for l in 1..levels {
                v.push((own[l - 1].clone(), own_masks[l - 1].clone()));
            }
            v
        };
        match &self.backbone {
            Backbone::TwoStream { texture, structure } => {
                let t = level_skips(&feats.texture_skips, &feats.masks_per_level, &feats.texture_input);
                let s = level_skips(&feats.structure_skips, &feats.structure_masks, &feats.structure_input);
                let borrow = self.config.cross_borrow;
                let texture_skips: Vec<Vec<(&Tensor, &Tensor)>> = (0..levels)
                    .map(|l| {
                        let mut v = vec![(&t[l].0, &t[l].1)];
                        if borrow {
                            v.push((&s[l].0, &s[l].1));
                        }
                        v
                    })
                    .collect();
                let structure_skips: Vec<Vec<(&Tensor, &Tensor)>> = (0..levels)
                    .map(|l| {
                        let mut v = vec![(&s[l].0, &s[l].1)];
                        if borrow {
                            v.push((&t[l].0, &t[l].1));
                        }
                        v
                    })
                    .collect();
                let mut trace = Vec::new();
                let f_t = texture.decode(
                    &feats.texture_skips[levels - 1],
                    &feats.masks_per_level[levels - 1],
                    &texture_skips,
                    mode,
                    &mut trace,
                )?;
                let f_s = structure.decode(
                    &feats.structure_skips[levels - 1],
                    &feats.structure_masks[levels - 1],
                    &structure_skips,
                    mode,
                    &mut Vec::new(),
                )?;
                Ok(Decoded {
                    texture: f_t,
                    structure: f_s,
                    decoder_masks: trace,
                })
            }
            Backbone::SingleStream {
                shared,
                texture_tail,
                structure_tail,
            } => {
                let own = level_skips(&feats.texture_skips, &feats.masks_per_level, &feats.texture_input);
                let skips: Vec<Vec<(&Tensor, &Tensor)>> = own.iter().map(|(f, m)| vec![(f, m)]).collect();
                let mut trace = Vec::new();
                let shared_out = shared.decode(
                    &feats.texture_skips[levels - 1],
                    &feats.masks_per_level[levels - 1],
                    &skips,
                    mode,
                    &mut trace,
                )?;
                let mask = &trace.last().expect("at least one decoder layer").1;
                let (f_t, _) = texture_tail.forward(&shared_out, mask, mode)?;
                let (f_s, _) = structure_tail.forward(&shared_out, mask, mode)?;
                Ok(Decoded {
                    texture: f_t.relu()?,
                    structure: f_s.relu()?,
                    decoder_masks: trace,
                })
            }
        }
    }

    /// `(rgb preview in [0,1], edge logits)` from the decoded maps.
    pub fn project_heads(&self, texture: &Tensor, structure: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.texture_head.forward(texture)?, self.structure_head.forward(structure)?))
    }

    /// Fusion, optional aggregation and the final image head.
    pub fn refine(&self, texture: &Tensor, structure: &Tensor) -> Result<Tensor> {
        let fused = match &self.fusion {
            Fusion::Gated(g) => g.fuse(texture, structure)?,
            Fusion::Concat(c) => c.fuse(texture, structure)?,
        };
        let refined = match &self.cfa {
            Some(cfa) => cfa.forward(&fused)?,
            None => fused,
        };
        sigmoid(&self.output.forward(&refined)?)
    }

    pub fn forward(&self, input: &GeneratorInput, mode: RunMode) -> Result<GeneratorOutput> {
        let feats = self.encode(input, mode)?;
        let decoded = self.decode(&feats, mode)?;
        let (texture_preview, edge_logits) = self.project_heads(&decoded.texture, &decoded.structure)?;
        let image = self.refine(&decoded.texture, &decoded.structure)?;
        Ok(GeneratorOutput {
            image,
            edge: sigmoid(&edge_logits)?,
            edge_logits,
            texture_preview,
            texture_features: decoded.texture,
            structure_features: decoded.structure,
        })
    }
}

/// Known pixels from the input, holes from the generator:
/// `mask ⊙ image_in + (1 − mask) ⊙ output`.
pub fn composite(output: &Tensor, image_in: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let hole = mask.affine(-1.0, 1.0)?;
    Ok((image_in.broadcast_mul(mask)? + output.broadcast_mul(&hole)?)?)
}
