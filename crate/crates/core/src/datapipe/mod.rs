//! Samples, mask buckets and batches.
//!
//! Images live in `[0, 1]`. Masks are `1` for known pixels and `0` for holes.

mod edges;
mod io;
mod synth;

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

pub use edges::{extract_edges, to_grayscale, EdgeParams, LUMA};
pub use io::{
    array_to_gray, array_to_rgb, gray_to_mask, list_masks, load_image, load_mask, load_paired_dir, read_manifest,
    rgb_to_array, save_gray_png, save_image_png, save_mask_png, write_dataset,
};
pub use synth::{random_mask, synth_dataset, synth_texture, MAX_HOLE_FRACTION};

use crate::error::{Error, Result};
use crate::generator::GeneratorInput;

/// Ground truth, mask and the corrupted views derived from them. Immutable
/// once built, so the invariants checked by [`Sample::validate`] hold for its
/// whole life.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    image_gt: Array3<f32>,
    edge_gt: Array3<f32>,
    gray_gt: Array3<f32>,
    mask: Array3<f32>,
    image_in: Array3<f32>,
    edge_in: Array3<f32>,
    gray_in: Array3<f32>,
}

impl Sample {
    /// Derives grayscale, edges and corrupted inputs from an RGB image and a
    /// binary mask.
    pub fn new(image_gt: Array3<f32>, mask: Array3<f32>, edges: EdgeParams) -> Result<Self> {
        let gray_gt = to_grayscale(image_gt.view())?;
        let edge_gt = extract_edges(gray_gt.view(), edges)?;
        Self::from_parts(image_gt, edge_gt, gray_gt, mask)
    }

    pub fn from_parts(image_gt: Array3<f32>, edge_gt: Array3<f32>, gray_gt: Array3<f32>, mask: Array3<f32>) -> Result<Self> {
        let apply = |a: &Array3<f32>| -> Result<Array3<f32>> {
            if a.shape()[1..] != mask.shape()[1..] {
                return Err(Error::Shape(format!("field {:?} vs mask {:?}", a.shape(), mask.shape())));
            }
            Ok(a * &mask)
        };
        let sample = Self {
            image_in: apply(&image_gt)?,
            edge_in: apply(&edge_gt)?,
            gray_in: apply(&gray_gt)?,
            image_gt,
            edge_gt,
            gray_gt,
            mask,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        for (name, a, c) in [
            ("image_gt", &self.image_gt, 3),
            ("edge_gt", &self.edge_gt, 1),
            ("gray_gt", &self.gray_gt, 1),
            ("mask", &self.mask, 1),
            ("image_in", &self.image_in, 3),
            ("edge_in", &self.edge_in, 1),
            ("gray_in", &self.gray_in, 1),
        ] {
            if a.shape() != [c, h, w] {
                return Err(Error::Shape(format!("{name} has shape {:?}, expected [{c}, {h}, {w}]", a.shape())));
            }
        }
        if !self.mask.iter().all(|v| *v == 0.0 || *v == 1.0) {
            return Err(Error::InvalidInput("mask is not binary".into()));
        }
        if !self.edge_gt.iter().all(|v| *v == 0.0 || *v == 1.0) {
            return Err(Error::InvalidInput("edge map is not binary".into()));
        }
        if !self.image_gt.iter().chain(self.gray_gt.iter()).all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("image values outside [0, 1]".into()));
        }
        for (gt, corrupted) in [
            (&self.image_gt, &self.image_in),
            (&self.edge_gt, &self.edge_in),
            (&self.gray_gt, &self.gray_in),
        ] {
            let ok = Zip::from(gt)
                .and(corrupted)
                .and_broadcast(&self.mask)
                .all(|g, c, m| *c == *g * *m);
            if !ok {
                return Err(Error::InvalidInput("corrupted view differs from ground truth times mask".into()));
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[2]
    }

    pub fn image_gt(&self) -> ArrayView3<'_, f32> {
        self.image_gt.view()
    }

    pub fn edge_gt(&self) -> ArrayView3<'_, f32> {
        self.edge_gt.view()
    }

    pub fn gray_gt(&self) -> ArrayView3<'_, f32> {
        self.gray_gt.view()
    }

    pub fn mask(&self) -> ArrayView3<'_, f32> {
        self.mask.view()
    }

    pub fn image_in(&self) -> ArrayView3<'_, f32> {
        self.image_in.view()
    }

    pub fn edge_in(&self) -> ArrayView3<'_, f32> {
        self.edge_in.view()
    }

    pub fn gray_in(&self) -> ArrayView3<'_, f32> {
        self.gray_in.view()
    }

    /// Fraction of hole pixels in `[0, 1]`.
    pub fn hole_fraction(&self) -> f64 {
        hole_fraction(self.mask.view())
    }

    pub fn bucket(&self) -> MaskBucket {
        classify_mask_ratio(self.mask.view())
    }
}

pub fn hole_fraction(mask: ArrayView3<f32>) -> f64 {
    let holes = mask.iter().filter(|v| **v < 0.5).count();
    holes as f64 / mask.len().max(1) as f64
}

/// Half-open hole-percentage interval `[lower, upper)` of width 10.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaskBucket {
    pub lower: u32,
    pub upper: u32,
}

impl MaskBucket {
    pub fn new(lower: u32) -> Result<Self> {
        if lower % 10 != 0 || lower >= 100 {
            return Err(Error::InvalidInput(format!("bucket lower bound {lower} is not a multiple of 10 below 100")));
        }
        Ok(Self { lower, upper: lower + 10 })
    }

    pub fn coarse(self) -> CoarseBucket {
        CoarseBucket { lower: self.lower / 20 * 20 }
    }
}

impl std::fmt::Display for MaskBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{})", self.lower, self.upper)
    }
}

/// Twenty-point bucket used by evaluation reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoarseBucket {
    pub lower: u32,
}

impl CoarseBucket {
    /// The three reported ranges.
    pub const REPORTED: [CoarseBucket; 3] = [
        CoarseBucket { lower: 0 },
        CoarseBucket { lower: 20 },
        CoarseBucket { lower: 40 },
    ];

    pub fn upper(self) -> u32 {
        self.lower + 20
    }

    pub fn label(self) -> String {
        format!("{}-{}%", self.lower, self.upper())
    }
}

/// Bucket holding `100 · mean(1 − mask)`. Computed in integers so the
/// half-open boundaries are exact; a fully masked image lands in `[90,100)`.
pub fn classify_mask_ratio(mask: ArrayView3<f32>) -> MaskBucket {
    let total = mask.len().max(1);
    let holes = mask.iter().filter(|v| **v < 0.5).count();
    let decade = (holes * 10 / total).min(9) as u32;
    MaskBucket {
        lower: decade * 10,
        upper: decade * 10 + 10,
    }
}

/// Where the mask of a sample comes from.
#[derive(Clone, Debug)]
pub enum MaskSource<'a> {
    File(&'a Path),
    /// `(1, H, W)` binary mask at the target size.
    Array(Array3<f32>),
    /// A procedural free-form mask drawn from this seed.
    Random(u64),
    AllKnown,
}

/// Loads an image, resizes it (bilinear) to `size × size`, attaches a mask
/// (nearest resize) and derives edges after resizing.
pub fn make_sample(image_path: &Path, mask: MaskSource<'_>, size: usize, edges: EdgeParams) -> Result<Sample> {
    let image = load_image(image_path, size)?;
    let mask = match mask {
        MaskSource::File(p) => load_mask(p, size)?,
        MaskSource::Array(m) => m,
        MaskSource::Random(seed) => {
            let mut rng = crate::nn::seeded_rng(seed);
            random_mask(&mut rng, size, size)
        }
        MaskSource::AllKnown => Array3::ones((1, size, size)),
    };
    if mask.shape() != [1, size, size] {
        return Err(Error::Shape(format!("mask {:?} does not match target size {size}", mask.shape())));
    }
    Sample::new(image, mask, edges)
}

/// Stacked tensors of a set of samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: GeneratorInput,
    pub image_gt: Tensor,
    pub edge_gt: Tensor,
    pub gray_gt: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample], dtype: DType) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let (h, w) = (first.height(), first.width());
        if samples.iter().any(|s| s.height() != h || s.width() != w) {
            return Err(Error::Shape("samples in a batch must share a size".into()));
        }
        let stack = |get: &dyn Fn(&Sample) -> ArrayView3<'_, f32>, c: usize| -> Result<Tensor> {
            let mut data = Vec::with_capacity(samples.len() * c * h * w);
            for s in samples {
                data.extend(get(s).iter().copied());
            }
            Ok(Tensor::from_vec(data, (samples.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
        };
        Ok(Self {
            input: GeneratorInput {
                image: stack(&|s| s.image_in(), 3)?,
                edge: stack(&|s| s.edge_in(), 1)?,
                gray: stack(&|s| s.gray_in(), 1)?,
                mask: stack(&|s| s.mask(), 1)?,
            },
            image_gt: stack(&|s| s.image_gt(), 3)?,
            edge_gt: stack(&|s| s.edge_gt(), 1)?,
            gray_gt: stack(&|s| s.gray_gt(), 1)?,
        })
    }

    pub fn len(&self) -> usize {
        self.image_gt.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(C, H, W)` array of the `index`-th image of a `(B, C, H, W)` tensor.
pub fn tensor_to_array(t: &Tensor, index: usize) -> Result<Array3<f32>> {
    let (_, c, h, w) = t.dims4()?;
    let data: Vec<f32> = t.get(index)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Array3::from_shape_vec((c, h, w), data).map_err(|e| Error::Shape(e.to_string()))
}
