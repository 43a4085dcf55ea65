use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One mini-batch of positive (user, item) pairs, parallel lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Yields every training pair exactly once per epoch, uniformly shuffled by
/// `epoch_seed`, chunked into batches (the last may be short).
pub fn batch_iterator(
    dataset: &InteractionDataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<BatchIter> {
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
    }
    if dataset.train.is_empty() {
        return Err(Error::InvalidParameter(
            "training partition is empty".into(),
        ));
    }
    let mut pairs: Vec<(usize, usize)> =
        dataset.train.iter().map(|r| (r.user, r.item)).collect();
    Rng::new(epoch_seed).shuffle(&mut pairs);
    Ok(BatchIter {
        pairs,
        batch_size,
        pos: 0,
    })
}

pub struct BatchIter {
    pairs: Vec<(usize, usize)>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.pairs.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.pairs.len());
        let chunk = &self.pairs[self.pos..end];
        self.pos = end;
        Some(Batch {
            users: chunk.iter().map(|p| p.0).collect(),
            items: chunk.iter().map(|p| p.1).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;

    fn tiny_dataset(n_pairs: usize) -> InteractionDataset {
        let train: Vec<Interaction> = (0..n_pairs)
            .map(|i| Interaction {
                user: i % 3,
                item: i,
                timestamp: i as i64,
            })
            .collect();
        InteractionDataset::from_partitions(3, n_pairs, train, vec![], vec![]).unwrap()
    }

    #[test]
    fn batch_sizes_chunk_correctly() {
        let ds = tiny_dataset(5);
        let sizes: Vec<usize> = batch_iterator(&ds, 2, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn same_seed_same_batches() {
        let ds = tiny_dataset(20);
        let a: Vec<Batch> = batch_iterator(&ds, 6, 42).unwrap().collect();
        let b: Vec<Batch> = batch_iterator(&ds, 6, 42).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<Batch> = batch_iterator(&ds, 6, 43).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn epoch_covers_training_partition_exactly() {
        let ds = tiny_dataset(17);
        let mut seen: Vec<(usize, usize)> = batch_iterator(&ds, 4, 7)
            .unwrap()
            .flat_map(|b| b.users.into_iter().zip(b.items).collect::<Vec<_>>())
            .collect();
        seen.sort_unstable();
        let mut expect: Vec<(usize, usize)> =
            ds.train.iter().map(|r| (r.user, r.item)).collect();
        expect.sort_unstable();
        assert_eq!(seen, expect);
    }

    #[test]
    fn zero_batch_size_rejected() {
        let ds = tiny_dataset(3);
        assert!(batch_iterator(&ds, 0, 0).is_err());
    }
}
