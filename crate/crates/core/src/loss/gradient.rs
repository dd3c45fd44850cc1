//! Sobel gradient fields and the gradient cosine similarity.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var, COSINE_NORM_FLOOR};

/// Horizontal (`G_x`) then vertical (`G_y`) Sobel kernels as a `[2, 1, 3, 3]`
/// cross-correlation weight.
const SOBEL: [f64; 18] = [
    -1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0, //
    -1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0,
];

/// Per-channel spatial gradients of an `[N, C, H, W]` image.
#[derive(Clone, Copy, Debug)]
pub struct GradientField {
    /// `[N, C, 2, H, W]`: `G_x` then `G_y` for every channel.
    pub packed: Var,
    pub batch: usize,
    pub channels: usize,
}

impl GradientField {
    fn component<T: Element>(&self, g: &mut Graph<T>, which: usize) -> Result<Var> {
        let s = g.shape(self.packed).to_vec();
        let (h, w) = (s[3], s[4]);
        let planes = g.reshape(self.packed, &[self.batch * self.channels, 2, h, w])?;
        let one = g.index_select(planes, 1, &[which])?;
        g.reshape(one, &[self.batch, self.channels, h, w])
    }

    /// `G_x` as `[N, C, H, W]`.
    pub fn gx<T: Element>(&self, g: &mut Graph<T>) -> Result<Var> {
        self.component(g, 0)
    }

    /// `G_y` as `[N, C, H, W]`.
    pub fn gy<T: Element>(&self, g: &mut Graph<T>) -> Result<Var> {
        self.component(g, 1)
    }

    /// One row per sample: for each channel, `G_x` then `G_y`, flattened.
    pub fn flattened<T: Element>(&self, g: &mut Graph<T>) -> Result<Var> {
        g.flatten(self.packed)
    }
}

/// Sobel 3×3 responses of every channel with replicate padding.
pub fn spatial_gradient<T: Element>(g: &mut Graph<T>, img: Var) -> Result<GradientField> {
    let s = g.shape(img).to_vec();
    if s.len() != 4 {
        return Err(Error::invalid("spatial_gradient", format!("expected [N, C, H, W], got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h < 3 || w < 3 {
        return Err(Error::invalid("spatial_gradient", format!("image {h}×{w} is smaller than 3×3")));
    }
    let planes = g.reshape(img, &[n * c, 1, h, w])?;
    let padded = g.replicate_pad(planes, 1)?;
    let kernel = g.constant(Tensor::from_f64(&[2, 1, 3, 3], &SOBEL)?);
    let resp = g.conv2d(padded, kernel, None, 1, 0)?;
    let packed = g.reshape(resp, &[n, c, 2, h, w])?;
    Ok(GradientField {
        packed,
        batch: n,
        channels: c,
    })
}

/// `X·Y / (‖X‖‖Y‖)`. When either norm is below `1e-12` the result is 1 if
/// both are, else 0.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("cosine_similarity", &[x.len()], &[y.len()]));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let (nx, ny) = (sxx.sqrt(), syy.sqrt());
    Ok(match (nx < COSINE_NORM_FLOOR, ny < COSINE_NORM_FLOOR) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => (dot / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
    })
}

/// `F_cos` between the gradient fields of `sr` and `hr`, averaged over the
/// batch. Returns a one-element variable.
pub fn gradient_cosine_loss<T: Element>(g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
    if g.shape(sr) != g.shape(hr) {
        return Err(Error::shape("gradient_cosine_loss", g.shape(sr), g.shape(hr)));
    }
    let fs = spatial_gradient(g, sr)?;
    let fh = spatial_gradient(g, hr)?;
    let (xs, xh) = (fs.flattened(g)?, fh.flattened(g)?);
    let rows = g.cosine_rows(xs, xh)?;
    g.mean(rows)
}

/// [`gradient_cosine_loss`] on plain tensors (`[C, H, W]` or `[N, C, H, W]`).
pub fn gradient_cosine_value<T: Element>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(batched(sr)?);
    let b = g.constant(batched(hr)?);
    let f = gradient_cosine_loss(&mut g, a, b)?;
    Ok(g.value(f).item().as_f64())
}

pub(crate) fn batched<T: Element>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match t.ndim() {
        4 => Ok(t.clone()),
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.clone().reshape(&s)
        }
        _ => Err(Error::invalid("image", format!("expected [C, H, W] or [N, C, H, W], got {:?}", t.shape()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(img: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
        let mut g = Graph::new();
        let v = g.constant(img.clone());
        let f = spatial_gradient(&mut g, v).unwrap();
        let (gx, gy) = (f.gx(&mut g).unwrap(), f.gy(&mut g).unwrap());
        (g.value(gx).clone(), g.value(gy).clone())
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let (gx, gy) = field(&Tensor::full(&[1, 3, 5, 6], 0.4));
        assert!(gx.data().iter().chain(gy.data()).all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn horizontal_ramp() {
        let w = 8;
        let img = Tensor::from_fn(&[1, 1, 6, w], |i| (i % w) as f64 / w as f64);
        let (gx, gy) = field(&img);
        for y in 0..6 {
            for x in 1..w - 1 {
                assert!((gx.data()[y * w + x] - 8.0 / w as f64).abs() < 1e-12);
            }
        }
        assert!(gy.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn too_small_is_an_error() {
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::zeros(&[1, 3, 2, 5]));
        assert!(spatial_gradient(&mut g, v).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_and_affine_images_score_one() {
        let hr = Tensor::from_fn(&[1, 3, 6, 6], |i| ((i * 7919) % 13) as f64 / 13.0);
        assert!((gradient_cosine_value(&hr, &hr).unwrap() - 1.0).abs() < 1e-15);
        let sr = hr.map(|v| 0.3 * v + 0.2);
        assert!((gradient_cosine_value(&sr, &hr).unwrap() - 1.0).abs() < 1e-14);
    }
}
