//! Image I/O, ×4 degradation, patches, and batching.

mod batches;
mod io;
mod patches;
mod resize;
mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batches::{batches, epoch_order, stack_batch, Batch, BatchCursor, Batches};
pub use io::{load_image, save_image, to_byte};
pub use patches::{crop, extract_patches, make_pairs, patch_corners};
pub(crate) use resize::resample_matrix;
pub use resize::{cubic, degrade_bicubic, resize_bicubic, upscale_bicubic};
pub use synthetic::synthetic_images;

use crate::error::{Error, Result};
use crate::parallel::map_range;
use crate::tensor::Tensor;

/// An aligned low/high-resolution pair with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    /// `[3, h, w]`.
    pub lr: Tensor<f32>,
    /// `[3, 4h, 4w]`.
    pub hr: Tensor<f32>,
    pub source: String,
}

impl ImagePair {
    pub fn new(lr: Tensor<f32>, hr: Tensor<f32>, source: String) -> Result<Self> {
        let (l, h) = (lr.shape(), hr.shape());
        if l.len() != 3 || h.len() != 3 || l[0] != h[0] || l[1] * 4 != h[1] || l[2] * 4 != h[2] {
            return Err(Error::shape("image pair", l, h));
        }
        let in_range = |t: &Tensor<f32>| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range(&lr) || !in_range(&hr) {
            return Err(Error::invalid("image pair", format!("{source}: values outside [0, 1]")));
        }
        Ok(Self { lr, hr, source })
    }
}

/// Where training patches come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Directory searched for images. Empty means "generate synthetic scenes".
    pub root: PathBuf,
    /// Glob relative to `root`.
    pub pattern: String,
    /// HR patch side (multiple of 4, ≥ 32).
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub seed: u64,
    /// Fraction of images held out for validation, in `(0, 1)`.
    pub val_fraction: f64,
    /// Number of synthetic scenes when `root` is empty.
    pub synthetic_images: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            root: PathBuf::new(),
            pattern: "**/*.png".into(),
            patch_size: 96,
            patches_per_image: 16,
            seed: 0,
            val_fraction: 0.2,
            synthetic_images: 80,
        }
    }
}

/// Train/validation split of image pairs.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<ImagePair>,
    pub val: Vec<ImagePair>,
}

fn split_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 32 || !self.patch_size.is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!(
                "patch_size must be ≥ 32 and divisible by 4, got {}",
                self.patch_size
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.patches_per_image == 0 {
            return Err(Error::InvalidConfig("patches_per_image must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn is_synthetic(&self) -> bool {
        self.root.as_os_str().is_empty()
    }

    /// Image files matched by `root/pattern`, sorted.
    pub fn files(&self) -> Result<Vec<PathBuf>> {
        if !self.root.is_dir() {
            return Err(Error::io(
                &self.root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let pattern = self.root.join(&self.pattern);
        let pattern = pattern.to_string_lossy();
        let mut files: Vec<PathBuf> = glob::glob(&pattern)
            .map_err(|e| Error::InvalidConfig(format!("bad pattern {pattern}: {e}")))?
            .filter_map(|p| p.ok())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyDataset(format!("no files match {pattern}")));
        }
        Ok(files)
    }

    /// Loads (or synthesises) images, splits them by image, and cuts patches.
    /// Synthetic scenes are already patch-sized and used whole.
    pub fn load(&self) -> Result<Dataset> {
        self.validate()?;
        let (mut images, names): (Vec<Tensor<f32>>, Vec<String>) = if self.is_synthetic() {
            if self.synthetic_images == 0 {
                return Err(Error::EmptyDataset("synthetic_images is 0".into()));
            }
            let imgs = synthetic_images(self.synthetic_images, self.patch_size, self.seed);
            let names = (0..imgs.len()).map(|i| format!("synthetic{i}")).collect();
            (imgs, names)
        } else {
            let files = self.files()?;
            let imgs = map_range(files.len(), |i| load_image::<f32>(&files[i]))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            (imgs, files.iter().map(|p| p.display().to_string()).collect())
        };
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let n_val = split_count(images.len(), self.val_fraction);
        let val_set: std::collections::HashSet<usize> = order[order.len() - n_val..].iter().copied().collect();
        let mut ds = Dataset::default();
        let synthetic = self.is_synthetic();
        for (i, img) in images.drain(..).enumerate() {
            let patches = if synthetic {
                vec![img]
            } else {
                extract_patches(&img, self.patch_size, self.patches_per_image, self.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))?
            };
            let pairs = make_pairs(patches, &names[i])?;
            if val_set.contains(&i) {
                ds.val.extend(pairs);
            } else {
                ds.train.extend(pairs);
            }
        }
        Ok(ds)
    }
}

/// Synthetic train/validation pairs of `size×size` HR patches.
pub fn synthetic_dataset(train: usize, val: usize, size: usize, seed: u64) -> Result<Dataset> {
    let imgs = synthetic_images(train + val, size, seed);
    let mut pairs = make_pairs(imgs, "synthetic")?;
    let val_pairs = pairs.split_off(train);
    Ok(Dataset {
        train: pairs,
        val: val_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_invariants() {
        assert!(ImagePair::new(Tensor::zeros(&[3, 2, 2]), Tensor::zeros(&[3, 8, 8]), "a".into()).is_ok());
        assert!(ImagePair::new(Tensor::zeros(&[3, 2, 2]), Tensor::zeros(&[3, 8, 7]), "a".into()).is_err());
        assert!(ImagePair::new(Tensor::full(&[3, 2, 2], 2.0), Tensor::zeros(&[3, 8, 8]), "a".into()).is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = DatasetSpec {
            patch_size: 30,
            ..DatasetSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = DatasetSpec {
            val_fraction: 1.0,
            ..DatasetSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn directory_dataset_splits_by_image() {
        let dir = tempfile::tempdir().unwrap();
        for (i, img) in synthetic_images(5, 48, 1).iter().enumerate() {
            save_image(img, dir.path().join(format!("img{i}.png"))).unwrap();
        }
        let spec = DatasetSpec {
            root: dir.path().into(),
            pattern: "*.png".into(),
            patch_size: 32,
            patches_per_image: 3,
            ..DatasetSpec::default()
        };
        let ds = spec.load().unwrap();
        assert_eq!(ds.val.len(), 3);
        assert_eq!(ds.train.len(), 12);
        let again = spec.load().unwrap();
        assert_eq!(ds.train, again.train);
    }

    #[test]
    fn missing_directory_names_the_path() {
        let spec = DatasetSpec {
            root: "/definitely/not/here".into(),
            ..DatasetSpec::default()
        };
        let err = spec.load().unwrap_err().to_string();
        assert!(err.contains("/definitely/not/here"), "{err}");
    }

    #[test]
    fn synthetic_split() {
        let ds = synthetic_dataset(4, 2, 32, 0).unwrap();
        assert_eq!((ds.train.len(), ds.val.len()), (4, 2));
        assert_eq!(ds.train[0].lr.shape(), &[3, 8, 8]);
    }
}
