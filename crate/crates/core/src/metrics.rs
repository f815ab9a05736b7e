//! PSNR and SSIM on `(C, H, W)` images in `[0, 1]`.

use ndarray::{Array2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::datapipe::{CoarseBucket, LUMA};
use crate::error::{Error, Result};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(a: &ArrayView3<f32>, b: &ArrayView3<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
    }
}

pub fn mse(a: ArrayView3<f32>, b: ArrayView3<f32>) -> Result<f64> {
    check_same(&a, &b)?;
    let sum: f64 = Zip::from(&a).and(&b).fold(0.0, |acc, x, y| {
        let d = f64::from(*x) - f64::from(*y);
        acc + d * d
    });
    Ok(sum / a.len().max(1) as f64)
}

/// `10 · log10(peak² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: ArrayView3<f32>, b: ArrayView3<f32>, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// PSNR over the hole pixels (`mask == 0`) only, all channels. `None` when
/// the mask has no holes.
pub fn masked_psnr(a: ArrayView3<f32>, b: ArrayView3<f32>, mask: ArrayView3<f32>, peak: f64) -> Result<Option<f64>> {
    check_same(&a, &b)?;
    if mask.shape()[1..] != a.shape()[1..] || mask.shape()[0] != 1 {
        return Err(Error::Shape(format!("mask {:?} vs image {:?}", mask.shape(), a.shape())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    Zip::from(&a).and(&b).and_broadcast(&mask).for_each(|x, y, m| {
        if *m < 0.5 {
            let d = f64::from(*x) - f64::from(*y);
            sum += d * d;
            n += 1;
        }
    });
    Ok((n > 0).then(|| psnr_from_mse(sum / n as f64, peak)))
}

/// Luma plane of a 3-channel image, or the single channel of a 1-channel one.
pub fn luma_plane(a: ArrayView3<f32>) -> Result<Array2<f64>> {
    match a.shape()[0] {
        1 => Ok(a.index_axis(Axis(0), 0).mapv(f64::from)),
        3 => {
            let (h, w) = (a.shape()[1], a.shape()[2]);
            Ok(Array2::from_shape_fn((h, w), |(y, x)| {
                LUMA.iter()
                    .enumerate()
                    .map(|(c, k)| f64::from(*k) * f64::from(a[[c, y, x]]))
                    .sum()
            }))
        }
        c => Err(Error::InvalidInput(format!("metric needs 1 or 3 channels, got {c}"))),
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering with the 1-D kernel `k`.
fn filter_valid(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let n = k.len();
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let rows = Array2::from_shape_fn((h, ow), |(y, x)| (0..n).map(|j| k[j] * img[[y, x + j]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(y, x)| (0..n).map(|j| k[j] * rows[[y + j, x]]).sum::<f64>())
}

/// Mean SSIM over all valid 11×11 Gaussian windows of the luma planes
/// (data range 1).
pub fn ssim(a: ArrayView3<f32>, b: ArrayView3<f32>) -> Result<f64> {
    check_same(&a, &b)?;
    let (h, w) = (a.shape()[1], a.shape()[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let x = luma_plane(a)?;
    let y = luma_plane(b)?;
    let k = gaussian_window();
    let mu_x = filter_valid(&x, &k);
    let mu_y = filter_valid(&y, &k);
    let xx = filter_valid(&(&x * &x), &k);
    let yy = filter_valid(&(&y * &y), &k);
    let xy = filter_valid(&(&x * &y), &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    Zip::from(&mu_x)
        .and(&mu_y)
        .and(&xx)
        .and(&yy)
        .and(&xy)
        .for_each(|mx, my, sxx, syy, sxy| {
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        });
    Ok((total / mu_x.len() as f64).clamp(-1.0, 1.0))
}

/// A full-reference image quality metric.
pub trait ImageMetric: Send + Sync {
    fn name(&self) -> &str;
    fn compute(&self, output: ArrayView3<f32>, reference: ArrayView3<f32>) -> Result<f64>;
}

pub struct Psnr {
    pub peak: f64,
}

impl ImageMetric for Psnr {
    fn name(&self) -> &str {
        "psnr"
    }

    fn compute(&self, output: ArrayView3<f32>, reference: ArrayView3<f32>) -> Result<f64> {
        psnr(output, reference, self.peak)
    }
}

pub struct Ssim;

impl ImageMetric for Ssim {
    fn name(&self) -> &str {
        "ssim"
    }

    fn compute(&self, output: ArrayView3<f32>, reference: ArrayView3<f32>) -> Result<f64> {
        ssim(output, reference)
    }
}

/// Mean metrics of one coarse bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bucket: CoarseBucket,
    pub psnr: f64,
    pub ssim: f64,
    pub n_samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn random(seed: u64, c: usize, n: usize) -> Array3<f32> {
        let mut rng = crate::nn::seeded_rng(seed);
        Array3::from_shape_fn((c, n, n), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn psnr_cap_and_offset() {
        let a = Array3::<f32>::from_elem((3, 8, 8), 0.3);
        assert_eq!(psnr(a.view(), a.view(), 1.0).unwrap(), PSNR_CAP);
        let b = a.mapv(|v| v + 0.1);
        assert!((psnr(a.view(), b.view(), 1.0).unwrap() - 20.0).abs() < 0.01);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random(1, 3, 16);
        let b = random(2, 3, 16);
        assert!((ssim(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(ssim(a.view(), b.view()).unwrap(), ssim(b.view(), a.view()).unwrap());
    }

    #[test]
    fn negative_is_anticorrelated() {
        let a = random(3, 1, 16);
        let neg = a.mapv(|v| 1.0 - v);
        assert!(ssim(a.view(), neg.view()).unwrap() < 0.0);
    }

    #[test]
    fn masked_psnr_ignores_known_pixels() {
        let a = Array3::<f32>::zeros((3, 4, 4));
        let mut b = a.clone();
        let mut mask = Array3::<f32>::ones((1, 4, 4));
        mask[[0, 0, 0]] = 0.0;
        b[[0, 1, 1]] = 1.0;
        assert_eq!(masked_psnr(a.view(), b.view(), mask.view(), 1.0).unwrap(), Some(PSNR_CAP));
        assert_eq!(masked_psnr(a.view(), b.view(), Array3::ones((1, 4, 4)).view(), 1.0).unwrap(), None);
    }

    #[test]
    fn small_images_are_rejected() {
        let a = random(4, 1, 8);
        assert!(ssim(a.view(), a.view()).is_err());
    }
}
