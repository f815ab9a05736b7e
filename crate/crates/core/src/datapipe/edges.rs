//! Grayscale conversion and Canny edge detection on `ndarray` images.

use std::collections::VecDeque;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};

/// BT.601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Canny parameters. Thresholds apply to the unnormalised Sobel magnitude of
/// the smoothed image.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EdgeParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl EdgeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("edge sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.low >= 0.0) || !(self.high >= self.low) {
            return Err(Error::InvalidConfig(format!(
                "edge thresholds need 0 <= low <= high, got {} / {}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// `(3, H, W)` RGB to `(1, H, W)` luma.
pub fn to_grayscale(image: ArrayView3<f32>) -> Result<Array3<f32>> {
    if image.shape()[0] != 3 {
        return Err(Error::InvalidInput(format!(
            "grayscale conversion needs 3 channels, got {}",
            image.shape()[0]
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut out = Array3::zeros((1, h, w));
    for y in 0..h {
        for x in 0..w {
            let v = LUMA[0] * image[[0, y, x]] + LUMA[1] * image[[1, y, x]] + LUMA[2] * image[[2, y, x]];
            out[[0, y, x]] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Canny edges of a `(1, H, W)` map: Gaussian smoothing, Sobel gradients,
/// non-maximum suppression and hysteresis. Output is `{0, 1}`.
pub fn extract_edges(gray: ArrayView3<f32>, params: EdgeParams) -> Result<Array3<f32>> {
    params.validate()?;
    if gray.shape()[0] != 1 {
        return Err(Error::InvalidInput(format!("edge detection needs 1 channel, got {}", gray.shape()[0])));
    }
    let plane = gray.index_axis(Axis(0), 0).mapv(f64::from);
    let edges = canny(plane.view(), params);
    Ok(edges.mapv(|e| if e { 1.0 } else { 0.0 }).insert_axis(Axis(0)))
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with replicate borders.
pub(crate) fn gaussian_blur(img: ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[[y, x]] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * img[[y, clamp_index(x as isize + j as isize - r, w)]])
                .sum();
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[[clamp_index(y as isize + j as isize - r, h), x]])
                .sum();
        }
    }
    out
}

fn canny(img: ArrayView2<f64>, params: EdgeParams) -> Array2<bool> {
    let (h, w) = img.dim();
    let s = gaussian_blur(img, params.sigma);
    let at = |y: isize, x: isize| s[[clamp_index(y, h), clamp_index(x, w)]];

    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            gx[[y as usize, x as usize]] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[[y as usize, x as usize]] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    let mag = ndarray::Zip::from(&gx).and(&gy).map_collect(|a, b| a.hypot(*b));

    // Keep a pixel if it strictly beats the neighbour behind it along the
    // gradient and is not beaten by the one ahead. On a plateau of two equal
    // maxima this keeps exactly one.
    let m = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[[y as usize, x as usize]]
        }
    };
    let mut thin = Array2::<f64>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            let v = mag[[y as usize, x as usize]];
            if v <= 0.0 {
                continue;
            }
            let angle = gy[[y as usize, x as usize]].atan2(gx[[y as usize, x as usize]]).to_degrees();
            let a = if angle < 0.0 { angle + 180.0 } else { angle };
            let (dy, dx) = if !(22.5..157.5).contains(&a) {
                (0, 1)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            if v > m(y - dy, x - dx) && v >= m(y + dy, x + dx) {
                thin[[y as usize, x as usize]] = v;
            }
        }
    }

    let mut out = Array2::from_elem((h, w), false);
    let mut queue = VecDeque::new();
    for ((y, x), v) in thin.indexed_iter() {
        if *v >= params.high {
            out[[y, x]] = true;
            queue.push_back((y, x));
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                if !out[[ny, nx]] && thin[[ny, nx]] >= params.low {
                    out[[ny, nx]] = true;
                    queue.push_back((ny, nx));
                }
            }
        }
    }
    out
}
