//! Oracles and numeric helpers shared by the integration tests.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use inpaint::nn::seeded_rng;
use rand::Rng;

pub mod grads;

pub const FD_STEP: f64 = 1e-5;

pub fn dev() -> Device {
    Device::Cpu
}

pub fn randn(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = seeded_rng(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            // Box-Muller keeps the draw independent of the tensor backend.
            let u1: f64 = rng.random_range(1e-12..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    Tensor::from_vec(v, shape, &dev()).unwrap()
}

pub fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = seeded_rng(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &dev()).unwrap()
}

/// Random binary mask `(b, 1, h, w)` with roughly `p_hole` holes.
pub fn random_mask(seed: u64, b: usize, h: usize, w: usize, p_hole: f64) -> Tensor {
    let mut rng = seeded_rng(seed);
    let v: Vec<f64> = (0..b * h * w)
        .map(|_| if rng.random_bool(p_hole) { 0.0 } else { 1.0 })
        .collect();
    Tensor::from_vec(v, (b, 1, h, w), &dev()).unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    flat(a).iter().zip(flat(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `Σ y ⊙ r` for a fixed random `r`: turns any output into a scalar whose
/// gradient exercises every output element.
pub fn project(y: &Tensor, seed: u64) -> Tensor {
    let r = randn(seed, y.dims());
    (y * r).unwrap().sum_all().unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct GradStats {
    pub probes: usize,
    /// Probes with relative error below 1e-3.
    pub good: usize,
    pub worst: f64,
}

impl GradStats {
    pub fn merge(self, o: GradStats) -> GradStats {
        GradStats {
            probes: self.probes + o.probes,
            good: self.good + o.good,
            worst: self.worst.max(o.worst),
        }
    }

    pub fn fraction_good(&self) -> f64 {
        self.good as f64 / self.probes.max(1) as f64
    }

    pub fn passes(&self) -> bool {
        self.fraction_good() >= 0.95 && self.worst < 1e-2
    }
}

/// Relative error with a floor so that gradients at round-off level do not
/// dominate.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central finite differences of scalar `f` at `x0` against autodiff, on up
/// to `max_probes` coordinates.
pub fn check_grad(f: &dyn Fn(&Tensor) -> Tensor, x0: &Tensor, max_probes: usize, seed: u64) -> GradStats {
    let x0 = x0.to_dtype(DType::F64).unwrap();
    let var = Var::from_tensor(&x0).unwrap();
    let y = f(var.as_tensor());
    let grads = y.backward().unwrap();
    let analytic = match grads.get(var.as_tensor()) {
        Some(g) => flat(g),
        None => vec![0.0; x0.elem_count()],
    };
    let base = flat(&x0);
    let n = base.len();
    let idx: Vec<usize> = if n <= max_probes {
        (0..n).collect()
    } else {
        let mut rng = seeded_rng(seed);
        rand::seq::index::sample(&mut rng, n, max_probes).into_vec()
    };
    let eval = |v: &[f64]| scalar(&f(&Tensor::from_slice(v, x0.dims(), &dev()).unwrap()));
    let mut stats = GradStats {
        probes: 0,
        good: 0,
        worst: 0.0,
    };
    for i in idx {
        let mut v = base.clone();
        v[i] = base[i] + FD_STEP;
        let plus = eval(&v);
        v[i] = base[i] - FD_STEP;
        let minus = eval(&v);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let e = rel_err(analytic[i], numeric);
        stats.probes += 1;
        if e < 1e-3 {
            stats.good += 1;
        }
        stats.worst = stats.worst.max(e);
    }
    stats
}

/// Direct-loop 2-D convolution, zero padding, `(B, C, H, W)` x `(O, C, k, k)`.
pub fn naive_conv(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, pad: usize, stride: usize) -> Tensor {
    let (b, c, h, wd) = x.dims4().unwrap();
    let (o, _, k, _) = w.dims4().unwrap();
    let xv = flat(x);
    let wv = flat(w);
    let bv = bias.map(flat).unwrap_or_else(|| vec![0.0; o]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for oi in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bv[oi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xv[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * wv[((oi * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((bi * o + oi) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Tensor::from_vec(out, (b, o, oh, ow), &dev()).unwrap()
}

/// Brute-force patch attention for one `(C, H, W)` map: cosine similarity of
/// replicate-padded 3x3 patches, softmax over candidates, then overlap-add
/// averaged by the number of in-image contributions.
pub struct CfaOracle {
    pub scores: Vec<Vec<f64>>,
    pub reconstructed: Vec<f64>,
}

pub fn cfa_oracle(f: &[f64], c: usize, h: usize, w: usize) -> CfaOracle {
    let at = |ch: usize, y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        f[(ch * h + yy) * w + xx]
    };
    let n = h * w;
    let patches: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let mut p = Vec::with_capacity(c * 9);
            for ch in 0..c {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        p.push(at(ch, y + dy, x + dx));
                    }
                }
            }
            p
        })
        .collect();
    let norm = |p: &[f64]| (p.iter().map(|v| v * v).sum::<f64>() + 1e-16).sqrt();
    let mut scores = vec![vec![0.0; n]; n];
    for i in 0..n {
        let ni = norm(&patches[i]);
        let sims: Vec<f64> = (0..n)
            .map(|j| patches[i].iter().zip(&patches[j]).map(|(a, b)| a * b).sum::<f64>() / (ni * norm(&patches[j])))
            .collect();
        let m = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = sims.iter().map(|s| (s - m).exp()).sum();
        for j in 0..n {
            scores[i][j] = (sims[j] - m).exp() / z;
        }
    }
    let mut acc = vec![0.0; c * n];
    let mut count = vec![0.0; n];
    for i in 0..n {
        let mixed: Vec<f64> = (0..c * 9)
            .map(|k| (0..n).map(|j| scores[i][j] * patches[j][k]).sum())
            .collect();
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (ty, tx) = (y + dy, x + dx);
                if ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize {
                    continue;
                }
                let t = ty as usize * w + tx as usize;
                count[t] += 1.0;
                for ch in 0..c {
                    acc[ch * n + t] += mixed[ch * 9 + ((dy + 1) * 3 + (dx + 1)) as usize];
                }
            }
        }
    }
    for ch in 0..c {
        for t in 0..n {
            acc[ch * n + t] /= count[t];
        }
    }
    CfaOracle {
        scores,
        reconstructed: acc,
    }
}

/// SSIM by explicit loops over every valid 11x11 window.
pub fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = 11;
    let sigma: f64 = 1.5;
    let mut g = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            g[y * k + x] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let wgt = g[y * k + x];
                    let p = (oy + y) * w + ox + x;
                    mx += wgt * a[p];
                    my += wgt * b[p];
                    sxx += wgt * a[p] * a[p];
                    syy += wgt * b[p] * b[p];
                    sxy += wgt * a[p] * b[p];
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Largest singular value by SVD.
pub fn sigma_max(m: &Tensor) -> f64 {
    let (r, c) = m.dims2().unwrap();
    let mat = nalgebra::DMatrix::from_row_slice(r, c, &flat(m));
    mat.singular_values().max()
}

pub const BOUNDARY: &str = "inpaint-test-boundary";

/// `multipart/form-data` body with the given parts.
pub fn multipart(parts: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n\r\n")
                .as_bytes(),
        );
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

/// Finite differences against autodiff for a parameter `var` that `f`
/// reads through its owning module.
pub fn check_grad_var(f: &dyn Fn() -> Tensor, var: &Var, max_probes: usize, seed: u64) -> GradStats {
    let original = var.as_tensor().copy().unwrap();
    let grads = f().backward().unwrap();
    let analytic = match grads.get(var.as_tensor()) {
        Some(g) => flat(g),
        None => vec![0.0; original.elem_count()],
    };
    let base = flat(&original);
    let n = base.len();
    let idx: Vec<usize> = if n <= max_probes {
        (0..n).collect()
    } else {
        let mut rng = seeded_rng(seed);
        rand::seq::index::sample(&mut rng, n, max_probes).into_vec()
    };
    let eval = |v: &[f64]| {
        var.set(&Tensor::from_slice(v, original.dims(), &dev()).unwrap()).unwrap();
        scalar(&f())
    };
    let mut stats = GradStats {
        probes: 0,
        good: 0,
        worst: 0.0,
    };
    for i in idx {
        let mut v = base.clone();
        v[i] = base[i] + FD_STEP;
        let plus = eval(&v);
        v[i] = base[i] - FD_STEP;
        let minus = eval(&v);
        let e = rel_err(analytic[i], (plus - minus) / (2.0 * FD_STEP));
        stats.probes += 1;
        if e < 1e-3 {
            stats.good += 1;
        }
        stats.worst = stats.worst.max(e);
    }
    var.set(&original).unwrap();
    stats
}
