//! Seeded shuffled batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImagePair;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A stacked minibatch: `lr: [N, 3, h, w]`, `hr: [N, 3, 4h, 4w]`.
#[derive(Clone, Debug)]
pub struct Batch<T: Element> {
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
    pub indices: Vec<usize>,
}

/// Permutation of `0..n` for `epoch`; each epoch uses its own ChaCha stream.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Stacks the selected pairs.
pub fn stack_batch<T: Element>(pairs: &[ImagePair], indices: &[usize]) -> Result<Batch<T>> {
    let lr: Vec<Tensor<T>> = indices.iter().map(|&i| pairs[i].lr.cast()).collect();
    let hr: Vec<Tensor<T>> = indices.iter().map(|&i| pairs[i].hr.cast()).collect();
    Ok(Batch {
        lr: Tensor::stack(&lr.iter().collect::<Vec<_>>())?,
        hr: Tensor::stack(&hr.iter().collect::<Vec<_>>())?,
        indices: indices.to_vec(),
    })
}

/// One epoch of batches; the final batch may be short.
pub struct Batches<'a, T: Element> {
    pairs: &'a [ImagePair],
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    _precision: std::marker::PhantomData<T>,
}

impl<'a, T: Element> Batches<'a, T> {
    pub fn for_epoch(pairs: &'a [ImagePair], batch_size: usize, seed: u64, epoch: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no image pairs to batch".into()));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batches", "batch size must be ≥ 1"));
        }
        Ok(Self {
            pairs,
            order: epoch_order(pairs.len(), seed, epoch),
            pos: 0,
            batch_size,
            _precision: std::marker::PhantomData,
        })
    }
}

impl<T: Element> Iterator for Batches<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(stack_batch(self.pairs, idx))
    }
}

/// The first epoch of seeded batches.
pub fn batches<T: Element>(pairs: &[ImagePair], batch_size: usize, seed: u64) -> Result<Batches<'_, T>> {
    Batches::for_epoch(pairs, batch_size, seed, 0)
}

/// Position in an endless epoch-by-epoch batch stream; serialisable so
/// training can resume mid-epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCursor {
    pub epoch: u64,
    pub position: usize,
}

impl BatchCursor {
    pub fn next_batch<T: Element>(&mut self, pairs: &[ImagePair], batch_size: usize, seed: u64) -> Result<Batch<T>> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no image pairs to batch".into()));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batches", "batch size must be ≥ 1"));
        }
        if self.position >= pairs.len() {
            self.epoch += 1;
            self.position = 0;
        }
        let order = epoch_order(pairs.len(), seed, self.epoch);
        let end = (self.position + batch_size).min(pairs.len());
        let batch = stack_batch(pairs, &order[self.position..end])?;
        self.position = end;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize) -> Vec<ImagePair> {
        (0..n)
            .map(|i| {
                ImagePair::new(
                    Tensor::full(&[3, 2, 2], i as f32 / n as f32),
                    Tensor::full(&[3, 8, 8], i as f32 / n as f32),
                    format!("p{i}"),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn sizes_and_permutation() {
        let p = pairs(10);
        let b: Vec<Batch<f32>> = batches(&p, 4, 3).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(b.iter().map(|b| b.indices.len()).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b[0].lr.shape(), &[4, 3, 2, 2]);
        let mut all: Vec<usize> = b.iter().flat_map(|b| b.indices.clone()).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn epochs_differ_and_seeds_repeat() {
        assert_ne!(epoch_order(16, 5, 0), epoch_order(16, 5, 1));
        assert_eq!(epoch_order(16, 5, 2), epoch_order(16, 5, 2));
    }

    #[test]
    fn cursor_walks_epochs() {
        let p = pairs(5);
        let mut c = BatchCursor::default();
        let sizes: Vec<usize> = (0..4).map(|_| c.next_batch::<f64>(&p, 2, 0).unwrap().indices.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 2]);
        assert_eq!(c, BatchCursor { epoch: 1, position: 2 });
    }

    #[test]
    fn empty_and_zero_batch() {
        assert!(batches::<f32>(&[], 4, 0).is_err());
        assert!(batches::<f32>(&pairs(2), 0, 0).is_err());
    }
}
