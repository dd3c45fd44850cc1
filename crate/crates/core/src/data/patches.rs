//! Random patch extraction and LR/HR pair construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::resize::degrade_bicubic;
use super::ImagePair;
use crate::error::{Error, Result};
use crate::parallel::map_range;
use crate::tensor::{Element, Tensor};

/// Seeded-uniform top-left corners `(y, x)` of `patch×patch` windows in an
/// `h×w` image.
pub fn patch_corners(h: usize, w: usize, patch: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || h < patch || w < patch {
        return Err(Error::invalid(
            "extract_patches",
            format!("image {h}×{w} is smaller than patch {patch}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| (rng.random_range(0..=h - patch), rng.random_range(0..=w - patch)))
        .collect())
}

/// Crops a `[C, patch, patch]` window with top-left corner `(y, x)`.
pub fn crop<T: Element>(img: &Tensor<T>, y: usize, x: usize, patch: usize) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.len() != 3 || y + patch > s[1] || x + patch > s[2] {
        return Err(Error::invalid("crop", format!("{patch}×{patch} at ({y}, {x}) in {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    Ok(Tensor::from_fn(&[s[0], patch, patch], |i| {
        let (c, r) = (i / (patch * patch), i % (patch * patch));
        img.data()[(c * h + y + r / patch) * w + x + r % patch]
    }))
}

/// `count` random `patch×patch` crops of a `[C, H, W]` image.
pub fn extract_patches<T: Element>(img: &Tensor<T>, patch: usize, count: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::invalid("extract_patches", format!("expected [C, H, W], got {s:?}")));
    }
    if !patch.is_multiple_of(4) {
        return Err(Error::invalid("extract_patches", format!("patch {patch} is not a multiple of 4")));
    }
    patch_corners(s[1], s[2], patch, count, seed)?
        .into_iter()
        .map(|(y, x)| crop(img, y, x, patch))
        .collect()
}

/// Builds LR/HR pairs by ×4 bicubic degradation (in parallel, order kept).
pub fn make_pairs(hr_patches: Vec<Tensor<f32>>, source: &str) -> Result<Vec<ImagePair>> {
    let lrs = map_range(hr_patches.len(), |i| degrade_bicubic(&hr_patches[i]));
    hr_patches
        .into_iter()
        .zip(lrs)
        .enumerate()
        .map(|(i, (hr, lr))| ImagePair::new(lr?, hr, format!("{source}#{i}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_count_is_empty() {
        let img = Tensor::<f32>::zeros(&[3, 40, 40]);
        assert!(extract_patches(&img, 32, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn deterministic_and_in_bounds() {
        assert_eq!(patch_corners(50, 60, 32, 5, 9).unwrap(), patch_corners(50, 60, 32, 5, 9).unwrap());
        for seed in 0..1000 {
            for (y, x) in patch_corners(37, 45, 32, 3, seed).unwrap() {
                assert!(y + 32 <= 37 && x + 32 <= 45);
            }
        }
    }

    #[test]
    fn crop_reads_the_right_window() {
        let img = Tensor::<f32>::from_fn(&[2, 6, 7], |i| i as f32);
        let c = crop(&img, 1, 2, 4).unwrap();
        assert_eq!(c.data()[0], (7 + 2) as f32);
        assert_eq!(c.data()[16], (42 + 7 + 2) as f32);
    }

    #[test]
    fn too_small_and_bad_patch() {
        let img = Tensor::<f32>::zeros(&[3, 20, 40]);
        assert!(extract_patches(&img, 32, 1, 0).is_err());
        assert!(extract_patches(&img, 18, 1, 0).is_err());
    }

    #[test]
    fn pairs_have_quarter_extent() {
        let p = make_pairs(vec![Tensor::full(&[3, 32, 32], 0.5)], "x").unwrap();
        assert_eq!(p[0].lr.shape(), &[3, 8, 8]);
        assert_eq!(p[0].source, "x#0");
    }
}
