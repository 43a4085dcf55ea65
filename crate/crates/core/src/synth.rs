//! Synthetic implicit-feedback generator with planted block structure.
//!
//! Users and items are split into `blocks` groups; each user interacts
//! mostly within the matching item block, with a `noise` fraction of draws
//! going anywhere. Any model that learns the blocks beats popularity by a
//! wide margin, which makes this the fixture for end-to-end training tests.

use std::collections::HashSet;

use crate::data::{remap_and_split, InteractionDataset, RawInteraction};
use crate::error::{Error, Result};
use crate::rng::{Rng, streams};

/// Generates `per_user` distinct interactions per user and runs the normal
/// chronological 0.8/0.1/0.1 split. Items of block b are the contiguous
/// index range [b·I/B, (b+1)·I/B).
pub fn synthetic_blocks(
    num_users: usize,
    num_items: usize,
    blocks: usize,
    per_user: usize,
    noise: f64,
    seed: u64,
) -> Result<InteractionDataset> {
    if num_users == 0 || num_items == 0 {
        return Err(Error::InvalidParameter("need users and items".into()));
    }
    if blocks == 0 || blocks > num_items || blocks > num_users {
        return Err(Error::InvalidParameter(format!(
            "blocks = {blocks} with {num_users} users, {num_items} items"
        )));
    }
    if per_user == 0 || per_user > num_items {
        return Err(Error::InvalidParameter(format!(
            "per_user = {per_user} with {num_items} items"
        )));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidParameter(format!("noise = {noise}")));
    }

    let block_lo = |b: usize| b * num_items / blocks;
    let block_hi = |b: usize| (b + 1) * num_items / blocks;

    let mut rng = Rng::for_stream(seed, &[streams::SYNTH]);
    let mut raw = Vec::with_capacity(num_users * per_user);
    for u in 0..num_users {
        let b = u % blocks;
        let (lo, hi) = (block_lo(b), block_hi(b));
        let mut chosen: HashSet<usize> = HashSet::with_capacity(per_user);
        let mut t = 0i64;
        while chosen.len() < per_user {
            let item = if rng.next_f64() < noise || hi == lo {
                rng.next_below(num_items as u64) as usize
            } else {
                lo + rng.next_below((hi - lo) as u64) as usize
            };
            if chosen.insert(item) {
                raw.push(RawInteraction {
                    user: format!("u{u}"),
                    item: format!("i{item}"),
                    timestamp: t,
                });
                t += 1;
            }
        }
    }
    remap_and_split(&raw, (0.8, 0.1, 0.1))
}
