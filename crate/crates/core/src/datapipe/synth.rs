//! Procedural textures and free-form masks.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{hole_fraction, EdgeParams, Sample};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

/// Generated masks keep their hole fraction strictly below this.
pub const MAX_HOLE_FRACTION: f64 = 0.6;

/// Smallest luma difference between the two colours of a texture.
pub const MIN_LUMA_CONTRAST: f32 = 0.25;

fn color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]
}

/// A striped, checkered or gradient `(3, h, w)` image in `[0, 1]`.
pub fn synth_texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array3<f32> {
    let a = color(rng);
    // Distinct luma keeps the texture visible to the edge detector.
    let luma = |c: [f32; 3]| super::LUMA.iter().zip(c).map(|(k, v)| k * v).sum::<f32>();
    let mut b = color(rng);
    while (luma(a) - luma(b)).abs() < MIN_LUMA_CONTRAST {
        b = color(rng);
    }
    let kind = rng.random_range(0..3u8);
    let mut img = Array3::zeros((3, h, w));
    match kind {
        0 => {
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            let period: f32 = rng.random_range(4.0..12.0);
            let (c, s) = (theta.cos(), theta.sin());
            for y in 0..h {
                for x in 0..w {
                    let t = (x as f32 * c + y as f32 * s) / period;
                    let pick = if t.rem_euclid(1.0) < 0.5 { a } else { b };
                    for ch in 0..3 {
                        img[[ch, y, x]] = pick[ch];
                    }
                }
            }
        }
        1 => {
            let cell = rng.random_range(3..9usize);
            for y in 0..h {
                for x in 0..w {
                    let pick = if (y / cell + x / cell) % 2 == 0 { a } else { b };
                    for ch in 0..3 {
                        img[[ch, y, x]] = pick[ch];
                    }
                }
            }
        }
        _ => {
            let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let (c, s) = (theta.cos(), theta.sin());
            let span = (h.max(w) as f32).max(1.0);
            for y in 0..h {
                for x in 0..w {
                    let t = ((x as f32 * c + y as f32 * s) / span).rem_euclid(1.0);
                    for ch in 0..3 {
                        img[[ch, y, x]] = a[ch] * (1.0 - t) + b[ch] * t;
                    }
                }
            }
        }
    }
    img
}

fn stamp_disk(mask: &mut Array3<f32>, cy: f32, cx: f32, r: f32) {
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h.saturating_sub(1));
    let x1 = ((cx + r).ceil() as usize).min(w.saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dy, dx) = (y as f32 - cy, x as f32 - cx);
            if dy * dy + dx * dx <= r * r {
                mask[[0, y, x]] = 0.0;
            }
        }
    }
}

fn add_rectangle(rng: &mut ChaCha8Rng, mask: &mut Array3<f32>) {
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    let rh = rng.random_range(1..=(h / 4).max(1));
    let rw = rng.random_range(1..=(w / 4).max(1));
    let y = rng.random_range(0..=h - rh);
    let x = rng.random_range(0..=w - rw);
    mask.slice_mut(ndarray::s![.., y..y + rh, x..x + rw]).fill(0.0);
}

fn add_stroke(rng: &mut ChaCha8Rng, mask: &mut Array3<f32>) {
    let (h, w) = (mask.shape()[1] as f32, mask.shape()[2] as f32);
    let mut y = rng.random_range(0.0..h);
    let mut x = rng.random_range(0.0..w);
    let radius = rng.random_range(0.5..(h.min(w) / 16.0).max(1.0));
    let segments = rng.random_range(1..5);
    let mut angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    for _ in 0..segments {
        angle += rng.random_range(-1.2..1.2);
        let len = rng.random_range(2.0..(h.min(w) / 3.0).max(3.0));
        let steps = (len / radius.max(0.5)).ceil() as usize;
        for _ in 0..=steps {
            stamp_disk(mask, y, x, radius);
            y = (y + angle.sin() * len / steps as f32).clamp(0.0, h - 1.0);
            x = (x + angle.cos() * len / steps as f32).clamp(0.0, w - 1.0);
        }
    }
}

/// Rectangles and brush strokes until the hole fraction reaches a target
/// drawn uniformly from `(0, 0.6)`; a draft that overshoots 60% is redrawn.
pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array3<f32> {
    let target: f64 = rng.random_range(0.0..MAX_HOLE_FRACTION);
    loop {
        let mut mask = Array3::ones((1, h, w));
        loop {
            let f = hole_fraction(mask.view());
            if f > 0.0 && f >= target {
                break;
            }
            if rng.random_bool(0.4) {
                add_rectangle(rng, &mut mask);
            } else {
                add_stroke(rng, &mut mask);
            }
        }
        if hole_fraction(mask.view()) < MAX_HOLE_FRACTION {
            return mask;
        }
    }
}

/// `n` procedural samples of size `size × size`, reproducible from `seed`.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 || size < 4 {
        return Err(Error::InvalidInput(format!("need n > 0 and size >= 4, got n={n} size={size}")));
    }
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let image = synth_texture(&mut rng, size, size);
            let mask = random_mask(&mut rng, size, size);
            Sample::new(image, mask, EdgeParams::default())
        })
        .collect()
}
