//! Procedural thermal-style scenes for self-contained runs.
//!
//! Each image is a grayscale scene (smooth background gradient with
//! low-frequency variation, a few warm rectangles and ellipses with sharp
//! boundaries, thin linear structures, mild sensor noise) promoted to three
//! identical channels. Rendering uses 4× supersampling so edges are
//! band-limited like a real sensor's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::parallel::map_range;
use crate::tensor::Tensor;

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64, v: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, v: f64 },
    Line { a: f64, b: f64, c: f64, half: f64, v: f64 },
}

impl Shape {
    fn value(&self, y: f64, x: f64) -> Option<f64> {
        match *self {
            Shape::Rect { y0, x0, y1, x1, v } => (y >= y0 && y < y1 && x >= x0 && x < x1).then_some(v),
            Shape::Ellipse { cy, cx, ry, rx, v } => {
                let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                (dy * dy + dx * dx <= 1.0).then_some(v)
            }
            Shape::Line { a, b, c, half, v } => ((a * y + b * x + c).abs() <= half).then_some(v),
        }
    }
}

fn scene(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let base = rng.random_range(0.15..0.45);
    let tilt = rng.random_range(-0.2..0.2);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.02..0.06),
                rng.random_range(0.5..3.0) / s,
                rng.random_range(0.5..3.0) / s,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut shapes = Vec::new();
    for _ in 0..rng.random_range(2..5) {
        let (h, w) = (rng.random_range(0.1..0.5) * s, rng.random_range(0.08..0.35) * s);
        let (y0, x0) = (rng.random_range(-0.1..0.9) * s, rng.random_range(-0.1..0.9) * s);
        let v = rng.random_range(0.4..0.95);
        shapes.push(if rng.random_bool(0.5) {
            Shape::Rect { y0, x0, y1: y0 + h, x1: x0 + w, v }
        } else {
            Shape::Ellipse { cy: y0 + h / 2.0, cx: x0 + w / 2.0, ry: h / 2.0, rx: w / 2.0, v }
        });
    }
    for _ in 0..rng.random_range(1..3) {
        let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (a, b) = (t.cos(), t.sin());
        let (py, px) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        shapes.push(Shape::Line {
            a,
            b,
            c: -(a * py + b * px),
            half: rng.random_range(0.6..2.0),
            v: rng.random_range(0.5..0.9),
        });
    }
    const SS: usize = 4;
    let mut out = vec![0.0; size * size];
    for (i, px) in out.iter_mut().enumerate() {
        let (py, pxx) = ((i / size) as f64, (i % size) as f64);
        let mut acc = 0.0;
        for sy in 0..SS {
            for sx in 0..SS {
                let y = py + (sy as f64 + 0.5) / SS as f64;
                let x = pxx + (sx as f64 + 0.5) / SS as f64;
                let mut v = base + tilt * (y / s - 0.5);
                for &(amp, fy, fx, ph) in &waves {
                    v += amp * (std::f64::consts::TAU * (fy * y + fx * x) + ph).sin();
                }
                for sh in &shapes {
                    if let Some(sv) = sh.value(y, x) {
                        v = sv;
                    }
                }
                acc += v;
            }
        }
        *px = acc / (SS * SS) as f64;
    }
    let noise = Normal::new(0.0, 0.01).expect("valid std");
    for v in &mut out {
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    out
}

/// `count` synthetic `[3, size, size]` images; image `i` depends only on
/// `(seed, i)`.
pub fn synthetic_images(count: usize, size: usize, seed: u64) -> Vec<Tensor<f32>> {
    map_range(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let gray = scene(size, &mut rng);
        let plane = size * size;
        Tensor::from_fn(&[3, size, size], |j| gray[j % plane] as f32)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_images(3, 32, 7);
        let b = synthetic_images(3, 32, 7);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        for t in &a {
            assert_eq!(t.shape(), &[3, 32, 32]);
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
