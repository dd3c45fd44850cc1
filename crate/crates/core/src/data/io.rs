//! PNG reading and writing.

use std::path::Path;

use image::{ImageBuffer, ImageError, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn image_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(source) => Error::io(path, source),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Reads a PNG as a `[3, H, W]` tensor of `byte / 255`. Grayscale (and
/// grayscale-alpha) images are promoted to three identical channels; alpha
/// is dropped.
pub fn load_image<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(Error::Image {
            path: path.to_path_buf(),
            source: ImageError::Unsupported(image::error::UnsupportedError::from_format_and_kind(
                image::error::ImageFormatHint::Unknown,
                image::error::UnsupportedErrorKind::GenericFeature("only PNG input is supported".into()),
            )),
        });
    }
    let img = reader.decode().map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let plane = h * w;
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        T::from_f64(raw[p * 3 + c] as f64 / 255.0)
    }))
}

/// Writes a `[3, H, W]` (or `[1, 3, H, W]`) tensor as an 8-bit RGB PNG,
/// clamping to `[0, 1]` and rounding to the nearest byte.
pub fn save_image<T: Element>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = t.shape();
    let (h, w) = match *s {
        [3, h, w] | [1, 3, h, w] => (h, w),
        _ => return Err(Error::invalid("save_image", format!("expected [3, H, W], got {s:?}"))),
    };
    let plane = h * w;
    let mut raw = vec![0u8; 3 * plane];
    for (p, px) in raw.chunks_mut(3).enumerate() {
        for (c, b) in px.iter_mut().enumerate() {
            *b = to_byte(t.data()[c * plane + p].as_f64());
        }
    }
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer length matches dimensions");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

/// `[0, 1]` value to the nearest byte (NaN maps to 0).
pub fn to_byte(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
