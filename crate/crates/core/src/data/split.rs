use crate::data::{Interaction, InteractionDataset, RawInteraction};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Remaps external ids to dense indices (ordered by first appearance) and
/// splits each user's history chronologically.
///
/// Duplicate (user, item) pairs collapse to their earliest timestamp before
/// splitting. Each user's interactions are sorted by (timestamp, item index)
/// and cut as: first ⌈r_train·n⌉ to train, next ⌈r_valid·n⌉ (capped by the
/// remainder) to validation, rest to test.
pub fn remap_and_split(
    interactions: &[RawInteraction],
    ratios: (f64, f64, f64),
) -> Result<InteractionDataset> {
    if interactions.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot split an empty interaction list".into(),
        ));
    }
    let (r_train, r_valid, r_test) = ratios;
    if !(r_train > 0.0 && r_valid > 0.0 && r_test > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (r_train + r_valid + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split ratios must sum to 1, got {ratios:?}"
        )));
    }

    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut earliest: HashMap<(usize, usize), i64> = HashMap::new();
    for rec in interactions {
        let next_u = user_ids.len();
        let u = *user_ids.entry(rec.user.as_str()).or_insert(next_u);
        let next_i = item_ids.len();
        let i = *item_ids.entry(rec.item.as_str()).or_insert(next_i);
        earliest
            .entry((u, i))
            .and_modify(|t| *t = (*t).min(rec.timestamp))
            .or_insert(rec.timestamp);
    }
    let num_users = user_ids.len();
    let num_items = item_ids.len();

    let mut per_user: Vec<Vec<(i64, usize)>> = vec![Vec::new(); num_users];
    for (&(u, i), &t) in &earliest {
        per_user[u].push((t, i));
    }

    // ⌈r·n⌉ with a guard against f64 products landing epsilon above an
    // integer (0.8·n must give exactly 4n/5 for n divisible by 5)
    let ceil_count = |r: f64, n: usize| ((r * n as f64) - 1e-6).ceil().max(0.0) as usize;

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (u, history) in per_user.iter_mut().enumerate() {
        history.sort_unstable();
        let n = history.len();
        let n_train = ceil_count(r_train, n).min(n);
        let n_valid = ceil_count(r_valid, n).min(n - n_train);
        for (pos, &(t, i)) in history.iter().enumerate() {
            let rec = Interaction {
                user: u,
                item: i,
                timestamp: t,
            };
            if pos < n_train {
                train.push(rec);
            } else if pos < n_train + n_valid {
                validation.push(rec);
            } else {
                test.push(rec);
            }
        }
    }

    InteractionDataset::from_partitions(num_users, num_items, train, validation, test)
}
