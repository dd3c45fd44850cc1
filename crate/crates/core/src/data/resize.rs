//! Separable Catmull-Rom (a = −0.5) resampling.
//!
//! Downsampling stretches the kernel by the scale factor (antialiasing).
//! Taps falling outside the image are dropped and the remaining weights
//! renormalised, so constants are preserved exactly up to rounding.

use crate::error::{Error, Result};
use crate::parallel::map_range;
use crate::tensor::{Element, Tensor};

/// Cubic convolution kernel with `a = −0.5`.
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Per output index: first input index and normalised weights.
pub(crate) fn weights_1d(input: usize, output: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = input as f64 / output as f64;
    let support_scale = scale.max(1.0);
    let support = 2.0 * support_scale;
    (0..output)
        .map(|o| {
            let centre = (o as f64 + 0.5) * scale;
            let lo = ((centre - support).floor().max(0.0)) as usize;
            let hi = ((centre + support).ceil() as usize).min(input);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| cubic((j as f64 + 0.5 - centre) / support_scale))
                .collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            (lo, w)
        })
        .collect()
}

/// The 1-D resampling as a `[input, output]` matrix, so that a row vector
/// times it is the resampled row.
pub(crate) fn resample_matrix<T: Element>(input: usize, output: usize) -> Tensor<T> {
    let mut m = Tensor::zeros(&[input, output]);
    for (o, (lo, ws)) in weights_1d(input, output).into_iter().enumerate() {
        for (k, w) in ws.into_iter().enumerate() {
            m.data_mut()[(lo + k) * output + o] = T::from_f64(w);
        }
    }
    m
}

/// Resizes every channel of a `[C, H, W]` tensor to `out_h × out_w`.
pub fn resize_bicubic<T: Element>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.len() != 3 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bicubic", format!("{s:?} → {out_h}×{out_w}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let wx = weights_1d(w, out_w);
    let wy = weights_1d(h, out_h);
    let planes = map_range(c, |ch| {
        let src = &img.data()[ch * h * w..(ch + 1) * h * w];
        // Horizontal pass: [h, out_w].
        let mut tmp = vec![0.0f64; h * out_w];
        for y in 0..h {
            for (ox, (lo, ws)) in wx.iter().enumerate() {
                tmp[y * out_w + ox] = ws.iter().enumerate().map(|(k, &wt)| wt * src[y * w + lo + k].as_f64()).sum();
            }
        }
        let mut out = vec![T::zero(); out_h * out_w];
        for (oy, (lo, ws)) in wy.iter().enumerate() {
            for ox in 0..out_w {
                let v: f64 = ws.iter().enumerate().map(|(k, &wt)| wt * tmp[(lo + k) * out_w + ox]).sum();
                out[oy * out_w + ox] = T::from_f64(v);
            }
        }
        out
    });
    Tensor::new(&[c, out_h, out_w], planes.concat())
}

/// ×4 antialiased bicubic downsampling, clamped to `[0, 1]`.
pub fn degrade_bicubic<T: Element>(hr: &Tensor<T>) -> Result<Tensor<T>> {
    let s = hr.shape();
    if s.len() != 3 || !s[1].is_multiple_of(4) || !s[2].is_multiple_of(4) {
        return Err(Error::invalid(
            "degrade_bicubic",
            format!("expected [C, 4h, 4w], got {s:?}"),
        ));
    }
    let lr = resize_bicubic(hr, s[1] / 4, s[2] / 4)?;
    Ok(clamp01(lr))
}

/// ×4 bicubic upscaling (the interpolation baseline), clamped to `[0, 1]`.
/// Accepts `[C, h, w]` or `[N, C, h, w]`.
pub fn upscale_bicubic<T: Element>(lr: &Tensor<T>) -> Result<Tensor<T>> {
    let s = lr.shape().to_vec();
    match s.len() {
        3 => Ok(clamp01(resize_bicubic(lr, s[1] * 4, s[2] * 4)?)),
        4 => {
            let items = (0..s[0])
                .map(|i| upscale_bicubic(&lr.index_first(i)?))
                .collect::<Result<Vec<_>>>()?;
            Tensor::stack(&items.iter().collect::<Vec<_>>())
        }
        _ => Err(Error::invalid("upscale_bicubic", format!("bad shape {s:?}"))),
    }
}

fn clamp01<T: Element>(t: Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max(T::zero()).min(T::one()))
}
