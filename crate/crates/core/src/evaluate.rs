//! Per-bucket PSNR / SSIM tables.

use std::collections::BTreeMap;

use candle_core::DType;
use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::datapipe::{tensor_to_array, Batch, CoarseBucket, Sample};
use crate::error::Result;
use crate::metrics::{psnr, ssim, MetricReport};
use crate::model::InpaintModel;

/// Produces an RGB output for each sample.
pub trait Predictor {
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Array3<f32>>>;
}

/// Returns the ground truth unchanged.
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Array3<f32>>> {
        Ok(samples.iter().map(|s| s.image_gt().to_owned()).collect())
    }
}

/// Returns the corrupted input, holes left at zero.
pub struct ZeroFill;

impl Predictor for ZeroFill {
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Array3<f32>>> {
        Ok(samples.iter().map(|s| s.image_in().to_owned()).collect())
    }
}

impl Predictor for InpaintModel {
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Array3<f32>>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(8) {
            let batch = Batch::from_samples(chunk, DType::F32)?;
            let result = self.inpaint_batch(&batch)?;
            for i in 0..chunk.len() {
                out.push(tensor_to_array(&result.output.image, i)?);
            }
        }
        Ok(out)
    }
}

/// `mask ⊙ image_gt + (1 − mask) ⊙ output`.
pub fn composite_array(output: ArrayView3<f32>, sample: &Sample) -> Array3<f32> {
    let mut out = output.to_owned();
    Zip::from(&mut out)
        .and(&sample.image_gt())
        .and_broadcast(&sample.mask())
        .for_each(|o, g, m| {
            if *m >= 0.5 {
                *o = *g;
            }
        });
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    /// Bucket labels in report order, present or not.
    pub buckets: Vec<String>,
    /// One row per non-empty reported bucket.
    pub rows: Vec<MetricReport>,
    /// Samples whose hole ratio falls outside the reported buckets.
    pub skipped: usize,
    pub composited: bool,
}

impl EvalTable {
    pub fn row(&self, bucket: CoarseBucket) -> Option<&MetricReport> {
        self.rows.iter().find(|r| r.bucket == bucket)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    /// Aligned text table: one PSNR and one SSIM line, one column per bucket.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<8}", "Metric");
        for b in CoarseBucket::REPORTED {
            s.push_str(&format!("{:>10}", b.label()));
        }
        s.push('\n');
        let mut line = |name: &str, f: &dyn Fn(&MetricReport) -> String| {
            s.push_str(&format!("{name:<8}"));
            for b in CoarseBucket::REPORTED {
                let cell = self.row(b).map(f).unwrap_or_else(|| "-".into());
                s.push_str(&format!("{cell:>10}"));
            }
            s.push('\n');
        };
        line("PSNR", &|r| format!("{:.2}", r.psnr));
        line("SSIM", &|r| format!("{:.4}", r.ssim));
        line("N", &|r| r.n_samples.to_string());
        s
    }
}

/// PSNR / SSIM per 20-point hole-ratio bucket. With `composite`, known
/// pixels are restored from the ground truth before scoring.
pub fn evaluate(predictor: &dyn Predictor, data: &[Sample], composite: bool) -> Result<EvalTable> {
    let refs: Vec<&Sample> = data.iter().collect();
    let outputs = predictor.predict(&refs)?;
    let mut acc: BTreeMap<CoarseBucket, (f64, f64, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for (sample, out) in data.iter().zip(&outputs) {
        let bucket = sample.bucket().coarse();
        if !CoarseBucket::REPORTED.contains(&bucket) {
            skipped += 1;
            continue;
        }
        let scored = if composite {
            composite_array(out.view(), sample)
        } else {
            out.clone()
        };
        let e = acc.entry(bucket).or_insert((0.0, 0.0, 0));
        e.0 += psnr(scored.view(), sample.image_gt(), 1.0)?;
        e.1 += ssim(scored.view(), sample.image_gt())?;
        e.2 += 1;
    }
    let rows = CoarseBucket::REPORTED
        .iter()
        .filter_map(|b| {
            acc.get(b).map(|(p, s, n)| MetricReport {
                bucket: *b,
                psnr: p / *n as f64,
                ssim: s / *n as f64,
                n_samples: *n,
            })
        })
        .collect();
    Ok(EvalTable {
        buckets: CoarseBucket::REPORTED.iter().map(|b| b.label()).collect(),
        rows,
        skipped,
        composited: composite,
    })
}
