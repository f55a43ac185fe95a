//! Train/validation splits and deterministic mini-batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::supernet::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Disjoint train and validation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub val: Batch,
}

impl Dataset {
    pub fn new(train: Batch, val: Batch) -> Self {
        Self { train, val }
    }

    pub fn split(&self, split: Split) -> &Batch {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.train.x.dims2().map_or(0, |(_, c)| c)
    }

    pub fn num_classes(&self) -> usize {
        self.train
            .labels
            .iter()
            .chain(&self.val.labels)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Paired (train, val) steps per epoch: full batches of the smaller split,
    /// at least one.
    pub fn steps_per_epoch(&self, batch_size: usize) -> usize {
        let n = self.train.len().min(self.val.len());
        (n / batch_size.max(1)).max(1)
    }

    /// The mini-batches of one epoch, reshuffled from `(seed, epoch)`.
    pub fn epoch_batches(&self, split: Split, batch_size: usize, seed: u64, epoch: usize) -> Vec<Batch> {
        let full = self.split(split);
        let steps = self.steps_per_epoch(batch_size);
        let size = batch_size.min(full.len()).max(1);
        let tag = match split {
            Split::Train => 0x7261_696e,
            Split::Val => 0x7661_6c00,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag ^ ((epoch as u64) << 32));
        let mut idx: Vec<usize> = (0..full.len()).collect();
        idx.shuffle(&mut rng);
        (0..steps)
            .map(|s| {
                let start = (s * size) % full.len();
                let rows: Vec<usize> = (0..size).map(|i| idx[(start + i) % full.len()]).collect();
                select_rows(full, &rows)
            })
            .collect()
    }
}

/// Rows `rows` of `batch`, in that order.
pub fn select_rows(batch: &Batch, rows: &[usize]) -> Batch {
    let (_, cols) = batch.x.dims2().expect("batch features are a matrix");
    let data = batch.x.data();
    let mut x = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        x.extend_from_slice(&data[r * cols..(r + 1) * cols]);
    }
    let labels = rows.iter().map(|&r| batch.labels[r]).collect();
    Batch::new(Tensor::matrix(rows.len(), cols, x).expect("finite"), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_batch;

    fn dataset() -> Dataset {
        Dataset::new(random_batch(10, 3, 2, 1), random_batch(7, 3, 2, 2))
    }

    #[test]
    fn batches_cover_distinct_rows() {
        let d = dataset();
        assert_eq!(d.steps_per_epoch(3), 2);
        let b = d.epoch_batches(Split::Train, 3, 5, 0);
        assert_eq!(b.len(), 2);
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for batch in &b {
            assert_eq!(batch.len(), 3);
            for r in batch.x.data().chunks(3) {
                let key: Vec<u64> = r.iter().map(|v| v.to_bits()).collect();
                assert!(!seen.contains(&key));
                seen.push(key);
            }
        }
    }

    #[test]
    fn batching_is_deterministic_and_epoch_dependent() {
        let d = dataset();
        assert_eq!(d.epoch_batches(Split::Val, 2, 9, 3), d.epoch_batches(Split::Val, 2, 9, 3));
        assert_ne!(d.epoch_batches(Split::Val, 2, 9, 3), d.epoch_batches(Split::Val, 2, 9, 4));
    }

    #[test]
    fn oversized_batch_uses_whole_split() {
        let d = dataset();
        let b = d.epoch_batches(Split::Val, 100, 0, 0);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 7);
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.input_dim(), 3);
    }
}
