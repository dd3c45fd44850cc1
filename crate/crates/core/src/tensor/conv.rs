//! im2col + GEMM lowering for 2-D cross-correlation.
//!
//! Each batch sample is lowered independently, which is where the data
//! parallelism lives. Weight and bias gradients are reduced from per-sample
//! partials in sample order so the result does not depend on scheduling.

use super::Element;
use crate::error::{Error, Result};
use crate::parallel;

/// Resolved extents of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn out_extent(len: usize, k: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = len + 2 * pad;
    if padded < k {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel {k} larger than padded {axis} extent {padded}"),
        ));
    }
    if !(padded - k).is_multiple_of(stride) {
        return Err(Error::invalid(
            "conv2d",
            format!("({axis} {len} + 2·{pad} − {k}) / stride {stride} is not an integer"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::shape("conv2d", input, weight));
        }
        if input[1] != weight[1] {
            return Err(Error::shape("conv2d", input, weight));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be ≥ 1"));
        }
        let out_h = out_extent(input[2], weight[2], stride, padding, "height")?;
        let out_w = out_extent(input[3], weight[3], stride, padding, "width")?;
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            height: input[2],
            width: input[3],
            filters: weight[0],
            kernel_h: weight[2],
            kernel_w: weight[3],
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_sample(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// 1×1, stride 1, no padding: the input sample already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    /// Stride 1 with a handful of filters: im2col would build a `C·K² × H·W`
    /// matrix to feed a GEMM with almost no rows, so shift-and-accumulate
    /// directly instead.
    fn is_direct(&self) -> bool {
        self.stride == 1 && self.filters <= DIRECT_MAX_FILTERS && !self.is_pointwise()
    }

    fn padded_plane(&self) -> (usize, usize) {
        (self.height + 2 * self.padding, self.width + 2 * self.padding)
    }

    /// Multiply-accumulates of the forward pass.
    pub fn macs(&self) -> u64 {
        (self.batch * self.filters * self.out_plane() * self.patch_len()) as u64
    }
}

const DIRECT_MAX_FILTERS: usize = 4;

/// One sample zero-padded to `[C, H + 2p, W + 2p]`.
fn pad_sample<T: Element>(xs: &[T], g: &ConvGeometry) -> Vec<T> {
    let (ph, pw) = g.padded_plane();
    let p = g.padding;
    let mut out = vec![T::zero(); g.in_channels * ph * pw];
    for c in 0..g.in_channels {
        for y in 0..g.height {
            let src = &xs[(c * g.height + y) * g.width..][..g.width];
            out[(c * ph + y + p) * pw + p..][..g.width].copy_from_slice(src);
        }
    }
    out
}

fn direct_forward<T: Element>(xp: &[T], weight: &[T], g: &ConvGeometry, y: &mut [T]) {
    let (ph, pw) = g.padded_plane();
    let plane = g.out_plane();
    for f in 0..g.filters {
        let dst = &mut y[f * plane..(f + 1) * plane];
        for c in 0..g.in_channels {
            for ki in 0..g.kernel_h {
                for kj in 0..g.kernel_w {
                    let wv = weight[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
                    for oy in 0..g.out_h {
                        let src = &xp[(c * ph + oy + ki) * pw + kj..][..g.out_w];
                        let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        line.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + wv * s);
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the padded input, then cropped.
fn direct_input_grad<T: Element>(go: &[T], weight: &[T], g: &ConvGeometry) -> Vec<T> {
    let (ph, pw) = g.padded_plane();
    let plane = g.out_plane();
    let mut dxp = vec![T::zero(); g.in_channels * ph * pw];
    for f in 0..g.filters {
        let gof = &go[f * plane..(f + 1) * plane];
        for c in 0..g.in_channels {
            for ki in 0..g.kernel_h {
                for kj in 0..g.kernel_w {
                    let wv = weight[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
                    for oy in 0..g.out_h {
                        let dst = &mut dxp[(c * ph + oy + ki) * pw + kj..][..g.out_w];
                        let src = &gof[oy * g.out_w..(oy + 1) * g.out_w];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + wv * s);
                    }
                }
            }
        }
    }
    let p = g.padding;
    let mut dx = vec![T::zero(); g.in_sample()];
    for c in 0..g.in_channels {
        for y in 0..g.height {
            dx[(c * g.height + y) * g.width..][..g.width].copy_from_slice(&dxp[(c * ph + y + p) * pw + p..][..g.width]);
        }
    }
    dx
}

fn direct_weight_grad<T: Element>(xp: &[T], go: &[T], g: &ConvGeometry) -> Vec<T> {
    let (ph, pw) = g.padded_plane();
    let plane = g.out_plane();
    let mut dw = vec![T::zero(); g.filters * g.patch_len()];
    for f in 0..g.filters {
        let gof = &go[f * plane..(f + 1) * plane];
        for c in 0..g.in_channels {
            for ki in 0..g.kernel_h {
                for kj in 0..g.kernel_w {
                    let mut acc = T::zero();
                    for oy in 0..g.out_h {
                        let src = &xp[(c * ph + oy + ki) * pw + kj..][..g.out_w];
                        let gl = &gof[oy * g.out_w..(oy + 1) * g.out_w];
                        acc = acc + src.iter().zip(gl).fold(T::zero(), |a, (&x, &d)| a + x * d);
                    }
                    dw[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] = acc;
                }
            }
        }
    }
    dw
}

fn im2col<T: Element>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let plane = g.out_plane();
    let (h, w) = (g.height as isize, g.width as isize);
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let src = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= h {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *v = if ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            src[base + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let plane = g.out_plane();
    let (h, w) = (g.height as isize, g.width as isize);
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let dst = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < w {
                            let d = &mut dst[base + ix as usize];
                            *d = *d + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &ConvGeometry,
) -> Vec<T> {
    let plane = g.out_plane();
    let per_sample = g.filters * plane;
    let mut out = vec![T::zero(); g.batch * per_sample];
    let k = g.patch_len();
    parallel::for_each_chunk_mut(&mut out, per_sample, |n, y| {
        let xs = &x[n * g.in_sample()..(n + 1) * g.in_sample()];
        if g.is_pointwise() {
            T::gemm(g.filters, k, plane, weight, false, xs, false, y, false);
        } else if g.is_direct() {
            direct_forward(&pad_sample(xs, g), weight, g, y);
        } else {
            let mut cols = vec![T::zero(); k * plane];
            im2col(xs, g, &mut cols);
            T::gemm(g.filters, k, plane, weight, false, &cols, false, y, false);
        }
        if let Some(b) = bias {
            for (f, row) in y.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = *v + b[f]);
            }
        }
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let per_out = g.filters * plane;
    let per_in = g.in_sample();

    let partials = parallel::map_range(g.batch, |n| {
        let go = &grad_out[n * per_out..(n + 1) * per_out];
        let xs = &x[n * per_in..(n + 1) * per_in];
        if g.is_direct() {
            let dx = need_input.then(|| direct_input_grad(go, weight, g));
            let dw = need_weight.then(|| direct_weight_grad(&pad_sample(xs, g), go, g));
            let db = need_bias.then(|| bias_grad(go, plane));
            return (dx, dw, db);
        }
        let dx = need_input.then(|| {
            if g.is_pointwise() {
                let mut dx = vec![T::zero(); per_in];
                T::gemm(k, g.filters, plane, weight, true, go, false, &mut dx, false);
                dx
            } else {
                let mut dcols = vec![T::zero(); k * plane];
                T::gemm(k, g.filters, plane, weight, true, go, false, &mut dcols, false);
                let mut dx = vec![T::zero(); per_in];
                col2im(&dcols, g, &mut dx);
                dx
            }
        });
        let dw = need_weight.then(|| {
            let mut dw = vec![T::zero(); g.filters * k];
            if g.is_pointwise() {
                T::gemm(g.filters, plane, k, go, false, xs, true, &mut dw, false);
            } else {
                let mut cols = vec![T::zero(); k * plane];
                im2col(xs, g, &mut cols);
                T::gemm(g.filters, plane, k, go, false, &cols, true, &mut dw, false);
            }
            dw
        });
        let db = need_bias.then(|| bias_grad(go, plane));
        (dx, dw, db)
    });

    let mut input = need_input.then(|| Vec::with_capacity(g.batch * per_in));
    let mut weight_grad: Option<Vec<T>> = None;
    let mut bias_grad: Option<Vec<T>> = None;
    for (dx, dw, db) in partials {
        if let (Some(acc), Some(dx)) = (input.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
        accumulate(&mut weight_grad, dw);
        accumulate(&mut bias_grad, db);
    }
    ConvGrads {
        input,
        weight: weight_grad,
        bias: bias_grad,
    }
}

fn bias_grad<T: Element>(go: &[T], plane: usize) -> Vec<T> {
    go.chunks(plane).map(|row| row.iter().copied().sum::<T>()).collect()
}

fn accumulate<T: Element>(acc: &mut Option<Vec<T>>, part: Option<Vec<T>>) {
    if let Some(part) = part {
        match acc {
            Some(a) => a.iter_mut().zip(&part).for_each(|(a, &b)| *a = *a + b),
            None => *acc = Some(part),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop cross-correlation.
    fn direct(x: &[f64], w: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.filters * g.out_h * g.out_w];
        for n in 0..g.batch {
            for f in 0..g.filters {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for c in 0..g.in_channels {
                            for ki in 0..g.kernel_h {
                                for kj in 0..g.kernel_w {
                                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    let xv = x[((n * g.in_channels + c) * g.height + iy as usize) * g.width + ix as usize];
                                    let wv = w[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((n * g.filters + f) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_loops() {
        for (stride, pad, k, filters) in [
            (1, 1, 3, 6),
            (2, 1, 3, 6),
            (1, 0, 1, 6),
            (2, 0, 1, 6),
            (1, 2, 5, 6),
            (3, 0, 2, 6),
            (1, 1, 3, 2),
            (1, 4, 9, 3),
            (1, 0, 2, 4),
        ] {
            let input = [2, 3, 7, 7];
            let weight = [filters, 3, k, k];
            let Ok(g) = ConvGeometry::new(&input, &weight, stride, pad) else {
                continue;
            };
            let x: Vec<f64> = (0..2 * 3 * 49).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
            let w: Vec<f64> = (0..filters * 3 * k * k).map(|i| ((i * 104729) % 89) as f64 / 89.0 - 0.5).collect();
            let got = conv2d_forward(&x, &w, None, &g);
            let want = direct(&x, &w, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad} k {k}");
            }
        }
    }

    /// The direct path's gradients equal the im2col path's (the adjoint
    /// identity `<conv(x), go> = <x, dx> = <w, dw>` ties both to the forward).
    #[test]
    fn direct_backward_matches_adjoint() {
        let g = ConvGeometry::new(&[2, 3, 6, 5], &[2, 3, 3, 3], 1, 1).unwrap();
        assert!(g.is_direct());
        let x: Vec<f64> = (0..2 * 3 * 30).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.4).collect();
        let w: Vec<f64> = (0..2 * 27).map(|i| ((i * 13) % 11) as f64 / 11.0 - 0.5).collect();
        let go: Vec<f64> = (0..2 * 2 * 30).map(|i| ((i * 7) % 19) as f64 / 19.0 - 0.5).collect();
        let y = conv2d_forward(&x, &w, None, &g);
        let grads = conv2d_backward(&x, &w, &go, &g, true, true, true);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
        let lhs = dot(&y, &go);
        assert!((lhs - dot(&x, grads.input.as_ref().unwrap())).abs() < 1e-12);
        assert!((lhs - dot(&w, grads.weight.as_ref().unwrap())).abs() < 1e-12);
        let db = grads.bias.unwrap();
        assert!((db[0] - go[..30].iter().chain(&go[60..90]).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_integer_extent() {
        assert!(ConvGeometry::new(&[1, 1, 6, 6], &[1, 1, 3, 3], 2, 0).is_err());
        assert!(ConvGeometry::new(&[1, 2, 6, 6], &[1, 1, 3, 3], 1, 0).is_err());
        assert!(ConvGeometry::new(&[1, 1, 6, 6], &[1, 1, 3, 3], 0, 0).is_err());
    }
}
