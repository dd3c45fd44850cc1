//! Straight-line loop implementations of the losses and metrics, used as
//! independent oracles.

use hetsr::data::cubic;
use hetsr::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Agreement required between library and oracle.
pub const TOL: f64 = 1e-6;
pub const SIDE: usize = 16;

/// 100 random `[3, 16, 16]` image pairs; the second is a noisy, blurred-ish
/// variant of the first so metrics land in a realistic range.
pub fn pairs() -> Vec<(Tensor<f64>, Tensor<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100)
        .map(|i| {
            let a = Tensor::<f64>::uniform(&[3, SIDE, SIDE], 0.0, 1.0, &mut rng);
            let noise = Tensor::<f64>::uniform(&[3, SIDE, SIDE], -0.2, 0.2, &mut rng);
            let b = if i % 10 == 0 {
                Tensor::<f64>::uniform(&[3, SIDE, SIDE], 0.0, 1.0, &mut rng)
            } else {
                Tensor::from_fn(&[3, SIDE, SIDE], |k| (a.data()[k] + noise.data()[k]).clamp(0.0, 1.0))
            };
            (a, b)
        })
        .collect()
}

fn at(t: &[f64], c: usize, y: usize, x: usize) -> f64 {
    t[(c * SIDE + y) * SIDE + x]
}

pub fn loop_mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

pub fn loop_psnr(a: &[f64], b: &[f64]) -> f64 {
    10.0 * (1.0 / loop_mse(a, b)).log10()
}

/// Sobel responses with edge replication, every channel, flattened.
pub fn loop_sobel(img: &[f64]) -> Vec<f64> {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut out = Vec::new();
    for c in 0..3 {
        for kernel in [kx, transpose(kx)] {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let yy = (y as isize + dy as isize - 1).clamp(0, SIDE as isize - 1) as usize;
                            let xx = (x as isize + dx as isize - 1).clamp(0, SIDE as isize - 1) as usize;
                            acc += kernel[dy][dx] * at(img, c, yy, xx);
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn transpose(k: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = k[j][i];
        }
    }
    t
}

pub fn loop_fcos(a: &[f64], b: &[f64]) -> f64 {
    let (ga, gb) = (loop_sobel(a), loop_sobel(b));
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..ga.len() {
        dot += ga[i] * gb[i];
        na += ga[i] * ga[i];
        nb += gb[i] * gb[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Gaussian-window SSIM (σ = 1.5, 11×11, edge replication) on BT.601 luma.
pub fn loop_ssim(a: &[f64], b: &[f64]) -> f64 {
    let luma = |t: &[f64], y: usize, x: usize| 0.299 * at(t, 0, y, x) + 0.587 * at(t, 1, y, x) + 0.114 * at(t, 2, y, x);
    let mut w = [[0.0; 11]; 11];
    let mut total = 0.0;
    for i in 0..11 {
        for j in 0..11 {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            w[i][j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += w[i][j];
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let yy = (y as isize + i as isize - 5).clamp(0, SIDE as isize - 1) as usize;
                    let xx = (x as isize + j as isize - 5).clamp(0, SIDE as isize - 1) as usize;
                    let k = w[i][j] / total;
                    let (p, q) = (luma(a, yy, xx), luma(b, yy, xx));
                    mx += k * p;
                    my += k * q;
                    mxx += k * p * p;
                    myy += k * q * q;
                    mxy += k * p * q;
                }
            }
            let (vx, vy, cov) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    sum / (SIDE * SIDE) as f64
}

/// Direct 2-D separable-kernel resampling with border renormalisation.
pub fn loop_resize(img: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let taps = |input: usize, output: usize, o: usize| -> Vec<(usize, f64)> {
        let scale = input as f64 / output as f64;
        let s = scale.max(1.0);
        let centre = (o as f64 + 0.5) * scale;
        let mut v: Vec<(usize, f64)> = (0..input)
            .map(|j| (j, cubic((j as f64 + 0.5 - centre) / s)))
            .filter(|&(_, wt)| wt != 0.0)
            .collect();
        let total: f64 = v.iter().map(|p| p.1).sum();
        v.iter_mut().for_each(|p| p.1 /= total);
        v
    };
    let mut out = vec![0.0; 3 * oh * ow];
    for c in 0..3 {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for &(y, wy) in &taps(h, oh, oy) {
                    for &(x, wx) in &taps(w, ow, ox) {
                        acc += wy * wx * img[(c * h + y) * w + x];
                    }
                }
                out[(c * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

