//! Interaction data pipeline: ingest delimited logs, k-core filter, remap to
//! dense indices, split chronologically per user, and serve shuffled
//! positive-pair mini-batches.

mod batch;
mod dump;
mod ingest;
mod kcore;
mod split;

pub use batch::{batch_iterator, Batch, BatchIter};
pub use dump::{read_canonical, write_canonical};
pub use ingest::{ingest, Field, FieldOrder};
pub use kcore::kcore_filter;
pub use split::remap_and_split;

use crate::error::{Error, Result};
use std::collections::HashSet;

/// One implicit-feedback record with external string ids, before remapping.
/// Explicit ratings are discarded at ingestion; presence is the signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// One record after remapping to dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// Remapped dataset with chronological train/validation/test partitions and
/// per-user sorted positive-item sets.
///
/// A (user, item) pair appears in at most one partition: duplicates collapse
/// to their earliest timestamp before splitting, so the partitions are
/// disjoint and |train|+|validation|+|test| equals the deduplicated total.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
    train_positives: Vec<Vec<usize>>,
    train_val_positives: Vec<Vec<usize>>,
    val_positives: Vec<Vec<usize>>,
    test_positives: Vec<Vec<usize>>,
}

impl InteractionDataset {
    /// Builds a dataset from already-remapped partitions, validating index
    /// ranges and global (user, item) uniqueness.
    pub fn from_partitions(
        num_users: usize,
        num_items: usize,
        train: Vec<Interaction>,
        validation: Vec<Interaction>,
        test: Vec<Interaction>,
    ) -> Result<Self> {
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        for (name, part) in [
            ("train", &train),
            ("validation", &validation),
            ("test", &test),
        ] {
            for rec in part {
                if rec.user >= num_users {
                    return Err(Error::InvalidIndex(format!(
                        "user {} in {name} partition, num_users = {num_users}",
                        rec.user
                    )));
                }
                if rec.item >= num_items {
                    return Err(Error::InvalidIndex(format!(
                        "item {} in {name} partition, num_items = {num_items}",
                        rec.item
                    )));
                }
                if !seen.insert((rec.user, rec.item)) {
                    return Err(Error::InvalidParameter(format!(
                        "duplicate pair (user {}, item {}) across partitions",
                        rec.user, rec.item
                    )));
                }
            }
        }

        let collect = |parts: &[&Vec<Interaction>]| {
            let mut sets: Vec<Vec<usize>> = vec![Vec::new(); num_users];
            for part in parts {
                for rec in *part {
                    sets[rec.user].push(rec.item);
                }
            }
            for s in &mut sets {
                s.sort_unstable();
            }
            sets
        };
        let train_positives = collect(&[&train]);
        let train_val_positives = collect(&[&train, &validation]);
        let val_positives = collect(&[&validation]);
        let test_positives = collect(&[&test]);

        Ok(InteractionDataset {
            num_users,
            num_items,
            train,
            validation,
            test,
            train_positives,
            train_val_positives,
            val_positives,
            test_positives,
        })
    }

    /// Sorted training items of `user`.
    pub fn train_positives(&self, user: usize) -> &[usize] {
        &self.train_positives[user]
    }

    /// Sorted train ∪ validation items of `user` (the test-phase mask).
    pub fn train_val_positives(&self, user: usize) -> &[usize] {
        &self.train_val_positives[user]
    }

    pub fn validation_positives(&self, user: usize) -> &[usize] {
        &self.val_positives[user]
    }

    pub fn test_positives(&self, user: usize) -> &[usize] {
        &self.test_positives[user]
    }

    /// Training interaction count of `user` (degree for bucket reports).
    pub fn train_degree(&self, user: usize) -> usize {
        self.train_positives[user].len()
    }

    pub fn sparsity(&self) -> f64 {
        let total = self.train.len() + self.validation.len() + self.test.len();
        1.0 - total as f64 / (self.num_users as f64 * self.num_items as f64)
    }
}
