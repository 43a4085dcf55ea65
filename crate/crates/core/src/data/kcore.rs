use crate::data::RawInteraction;
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Iterative k-core filtering on the deduplicated user-item graph: users and
/// items with fewer than k distinct interactions are peeled until a fixpoint.
/// Output keeps first-occurrence order, each pair at its earliest timestamp.
/// An empty result is valid.
pub fn kcore_filter(interactions: &[RawInteraction], k: usize) -> Result<Vec<RawInteraction>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k-core needs k >= 1".into()));
    }

    // dedup (user, item) at the earliest timestamp, preserving first sight
    let mut index: HashMap<(&str, &str), usize> = HashMap::new();
    let mut pairs: Vec<RawInteraction> = Vec::new();
    for rec in interactions {
        match index.entry((rec.user.as_str(), rec.item.as_str())) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(pairs.len());
                pairs.push(rec.clone());
            }
            std::collections::hash_map::Entry::Occupied(e) => {
                let kept = &mut pairs[*e.get()];
                if rec.timestamp < kept.timestamp {
                    kept.timestamp = rec.timestamp;
                }
            }
        }
    }

    let mut alive = vec![true; pairs.len()];
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (rec, &a) in pairs.iter().zip(&alive) {
            if a {
                *user_deg.entry(rec.user.as_str()).or_default() += 1;
                *item_deg.entry(rec.item.as_str()).or_default() += 1;
            }
        }
        let mut changed = false;
        for (rec, a) in pairs.iter().zip(&mut alive) {
            if *a && (user_deg[rec.user.as_str()] < k || item_deg[rec.item.as_str()] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    Ok(pairs
        .into_iter()
        .zip(alive)
        .filter_map(|(rec, a)| a.then_some(rec))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(user: &str, item: &str, t: i64) -> RawInteraction {
        RawInteraction {
            user: user.into(),
            item: item.into(),
            timestamp: t,
        }
    }

    #[test]
    fn k1_returns_deduplicated_input() {
        let input = vec![raw("a", "x", 5), raw("a", "x", 2), raw("b", "y", 1)];
        let out = kcore_filter(&input, 1).unwrap();
        assert_eq!(out, vec![raw("a", "x", 2), raw("b", "y", 1)]);
    }

    #[test]
    fn star_graph_collapses_at_k2() {
        // one user with 5 items of degree 1: every item dies, then the user
        let input: Vec<_> = (0..5).map(|i| raw("u", &format!("i{i}"), i)).collect();
        assert!(kcore_filter(&input, 2).unwrap().is_empty());
    }

    #[test]
    fn complete_bipartite_3x3_survives_k3() {
        let mut input = Vec::new();
        for u in 0..3 {
            for i in 0..3 {
                input.push(raw(&format!("u{u}"), &format!("i{i}"), u * 3 + i));
            }
        }
        let out = kcore_filter(&input, 3).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn cascading_peel() {
        // u0 ties to i0,i1; u1 ties to i0,i1; u2 ties only to i2.
        // k=2: i2 dies → u2 dies; the 2x2 core survives.
        let input = vec![
            raw("u0", "i0", 0),
            raw("u0", "i1", 1),
            raw("u1", "i0", 2),
            raw("u1", "i1", 3),
            raw("u2", "i2", 4),
        ];
        let out = kcore_filter(&input, 2).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|r| r.user != "u2"));
    }

    #[test]
    fn rerun_is_identity() {
        let input = vec![
            raw("u0", "i0", 0),
            raw("u0", "i1", 1),
            raw("u1", "i0", 2),
            raw("u1", "i1", 3),
            raw("u2", "i0", 4),
        ];
        let once = kcore_filter(&input, 2).unwrap();
        let twice = kcore_filter(&once, 2).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn k_zero_rejected() {
        assert!(kcore_filter(&[], 0).is_err());
    }
}
