//! PSNR and single-scale SSIM.

use super::gradient::batched;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
/// Side of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the Gaussian SSIM window.
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// ITU-R BT.601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// `10·log10(peak² / MSE)` in dB; [`PSNR_CAP_DB`] when the images are equal.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid("psnr", format!("peak must be positive, got {peak}")));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    let mse = sse / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalised 1-D Gaussian taps.
pub(crate) fn gaussian_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn luminance<T: Element>(g: &mut Graph<T>, img: Var) -> Result<Var> {
    match g.shape(img)[1] {
        1 => Ok(img),
        3 => {
            let w = g.constant(Tensor::from_f64(&[1, 3, 1, 1], &LUMA)?);
            g.conv2d(img, w, None, 1, 0)
        }
        c => Err(Error::invalid("ssim", format!("expected 1 or 3 channels, got {c}"))),
    }
}

fn blur<T: Element>(g: &mut Graph<T>, x: Var, kernel: Var) -> Result<Var> {
    let p = g.replicate_pad(x, SSIM_WINDOW / 2)?;
    g.conv2d(p, kernel, None, 1, 0)
}

/// Differentiable mean SSIM of two `[N, C, H, W]` images (data range 1)
/// on luminance, with replicate padding at the borders.
pub fn ssim_var<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) || g.shape(a).len() != 4 {
        return Err(Error::shape("ssim", g.shape(a), g.shape(b)));
    }
    let taps = gaussian_taps();
    let window: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| taps[i / SSIM_WINDOW] * taps[i % SSIM_WINDOW])
        .collect();
    let kernel = g.constant(Tensor::from_f64(&[1, 1, SSIM_WINDOW, SSIM_WINDOW], &window)?);
    let (c1, c2) = (T::from_f64(K1 * K1), T::from_f64(K2 * K2));
    let (x, y) = (luminance(g, a)?, luminance(g, b)?);
    let (xx, yy, xy) = (g.mul(x, x)?, g.mul(y, y)?, g.mul(x, y)?);
    let mx = blur(g, x, kernel)?;
    let my = blur(g, y, kernel)?;
    let (mxx, myy, mxy) = (blur(g, xx, kernel)?, blur(g, yy, kernel)?, blur(g, xy, kernel)?);
    let (mx2, my2, mxmy) = (g.mul(mx, mx)?, g.mul(my, my)?, g.mul(mx, my)?);
    let vx = g.sub(mxx, mx2)?;
    let vy = g.sub(myy, my2)?;
    let cov = g.sub(mxy, mxmy)?;
    let two = T::from_f64(2.0);
    let l_num = g.mul_scalar(mxmy, two)?;
    let l_num = g.add_scalar(l_num, c1)?;
    let c_num = g.mul_scalar(cov, two)?;
    let c_num = g.add_scalar(c_num, c2)?;
    let l_den = g.add(mx2, my2)?;
    let l_den = g.add_scalar(l_den, c1)?;
    let c_den = g.add(vx, vy)?;
    let c_den = g.add_scalar(c_den, c2)?;
    let num = g.mul(l_num, c_num)?;
    let den = g.mul(l_den, c_den)?;
    let map = g.div(num, den)?;
    g.mean(map)
}

/// Mean SSIM of two images (`[C, H, W]` or `[N, C, H, W]`).
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let mut g = Graph::new();
    let x = g.constant(batched(a)?);
    let y = g.constant(batched(b)?);
    let s = ssim_var(&mut g, x, y)?;
    Ok(g.value(s).item().as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images() {
        let a = Tensor::<f64>::uniform(&[3, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_level_offset() {
        let a = Tensor::<f64>::full(&[3, 8, 8], 0.5);
        let b = a.map(|v| v + 1.0 / 255.0);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((psnr(&a, &b, 1.0).unwrap() - 48.1308).abs() < 1e-4);
    }

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps();
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn errors() {
        let a = Tensor::<f64>::zeros(&[3, 8, 8]);
        let b = Tensor::<f64>::zeros(&[3, 8, 9]);
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(ssim(&a, &b).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }
}
