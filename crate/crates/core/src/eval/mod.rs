//! Full-ranking evaluation: every non-masked item is a candidate, scored by
//! the cross-prediction rule s(u, i) = h(e_u)ᵀe_i + e_uᵀh(e_i) (plain dot
//! product when there is no predictor), ranked with ties broken by ascending
//! item index, and measured by Recall@K and NDCG@K. No sampled candidates,
//! ever.

mod report;

pub use report::{BucketReport, EvalPhase, MetricsReport};

use rayon::prelude::*;

use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::selfcf::predictor::Predictor;

/// Degree-bucket boundaries matching the cold-start analysis: 1-5, 6-10,
/// 11-20, 21-50, 51+.
pub const DEFAULT_BUCKET_EDGES: [usize; 4] = [5, 10, 20, 50];

impl EvalPhase {
    /// Ground-truth items for the phase, sorted ascending.
    fn positives<'a>(&self, dataset: &'a InteractionDataset, user: usize) -> &'a [usize] {
        match self {
            EvalPhase::Validation => dataset.validation_positives(user),
            EvalPhase::Test => dataset.test_positives(user),
        }
    }

    /// Items removed from the candidate set, sorted ascending. Validation
    /// hides training items; test hides training and validation items so
    /// model selection cannot leak into the final numbers.
    fn masked<'a>(&self, dataset: &'a InteractionDataset, user: usize) -> &'a [usize] {
        match self {
            EvalPhase::Validation => dataset.train_positives(user),
            EvalPhase::Test => dataset.train_val_positives(user),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn score_row(
    user_row: &[f64],
    h_user_row: Option<&[f64]>,
    item_row: &[f64],
    h_item_row: Option<&[f64]>,
) -> f64 {
    match (h_user_row, h_item_row) {
        (Some(hu), Some(hi)) => dot(hu, item_row) + dot(user_row, hi),
        _ => dot(user_row, item_row),
    }
}

/// Scores every item for one user; items masked by the phase are −∞ and
/// never enter any ranking.
pub fn score_user(
    dataset: &InteractionDataset,
    user: usize,
    user_full: &DenseMatrix,
    item_full: &DenseMatrix,
    predictor: Option<&Predictor>,
    phase: EvalPhase,
) -> Result<Vec<f64>> {
    check_tables(dataset, user_full, item_full)?;
    if user >= dataset.num_users {
        return Err(Error::InvalidIndex(format!(
            "user {user}, num_users = {}",
            dataset.num_users
        )));
    }
    let h_item = match predictor {
        Some(h) => Some(h.forward(item_full)?),
        None => None,
    };
    let h_user_row = match predictor {
        Some(h) => {
            let row = DenseMatrix::from_vec(1, user_full.cols(), user_full.row(user).to_vec())?;
            Some(h.forward(&row)?)
        }
        None => None,
    };
    let masked = phase.masked(dataset, user);
    let user_row = user_full.row(user);
    let mut scores = Vec::with_capacity(dataset.num_items);
    for i in 0..dataset.num_items {
        if masked.binary_search(&i).is_ok() {
            scores.push(f64::NEG_INFINITY);
        } else {
            scores.push(score_row(
                user_row,
                h_user_row.as_ref().map(|m| m.row(0)),
                item_full.row(i),
                h_item.as_ref().map(|m| m.row(i)),
            ));
        }
    }
    Ok(scores)
}

/// Fraction of the ground truth found in the first K ranked items.
/// `test_items` must be sorted ascending; an empty ground truth scores 0.
pub fn recall_at_k(ranked: &[usize], test_items: &[usize], k: usize) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| test_items.binary_search(i).is_ok())
        .count();
    hits as f64 / test_items.len() as f64
}

/// Binary-relevance NDCG: DCG with 1/log₂(rank+1) gains over the first K
/// ranks, normalized by the ideal DCG of min(K, |ground truth|) hits at the
/// top. `test_items` must be sorted ascending.
pub fn ndcg_at_k(ranked: &[usize], test_items: &[usize], k: usize) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let mut dcg = 0.0;
    for (pos, i) in ranked.iter().take(k).enumerate() {
        if test_items.binary_search(i).is_ok() {
            dcg += discount(pos);
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(test_items.len()) {
        idcg += discount(pos);
    }
    dcg / idcg
}

/// Per-user ranking quality, `recall[j]`/`ndcg[j]` aligned with the K list
/// passed to [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub degree: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

fn check_tables(
    dataset: &InteractionDataset,
    user_full: &DenseMatrix,
    item_full: &DenseMatrix,
) -> Result<()> {
    if user_full.rows() != dataset.num_users
        || item_full.rows() != dataset.num_items
        || user_full.cols() != item_full.cols()
    {
        return Err(Error::InvalidDimension(format!(
            "tables {}x{} and {}x{} against {} users, {} items",
            user_full.rows(),
            user_full.cols(),
            item_full.rows(),
            item_full.cols(),
            dataset.num_users,
            dataset.num_items
        )));
    }
    Ok(())
}

/// Ranks all candidates for every user with phase ground truth and reports
/// mean Recall@K and NDCG@K per requested K, plus degree buckets. Users are
/// processed in parallel and reduced in index order, so the result is
/// deterministic.
pub fn evaluate(
    dataset: &InteractionDataset,
    user_full: &DenseMatrix,
    item_full: &DenseMatrix,
    predictor: Option<&Predictor>,
    k_list: &[usize],
    phase: EvalPhase,
    bucket_edges: &[usize],
) -> Result<MetricsReport> {
    check_tables(dataset, user_full, item_full)?;
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::InvalidParameter(
            "k_list must be non-empty with K >= 1".into(),
        ));
    }
    check_edges(bucket_edges)?;
    let max_k = *k_list.iter().max().expect("non-empty");

    let h_user = match predictor {
        Some(h) => Some(h.forward(user_full)?),
        None => None,
    };
    let h_item = match predictor {
        Some(h) => Some(h.forward(item_full)?),
        None => None,
    };

    let per_user: Vec<Option<UserMetrics>> = (0..dataset.num_users)
        .into_par_iter()
        .map(|u| {
            let truth = phase.positives(dataset, u);
            if truth.is_empty() {
                return None;
            }
            let masked = phase.masked(dataset, u);
            let user_row = user_full.row(u);
            let hu_row = h_user.as_ref().map(|m| m.row(u));

            let mut candidates: Vec<(usize, f64)> = (0..dataset.num_items)
                .filter(|i| masked.binary_search(i).is_err())
                .map(|i| {
                    let s = score_row(
                        user_row,
                        hu_row,
                        item_full.row(i),
                        h_item.as_ref().map(|m| m.row(i)),
                    );
                    (i, s)
                })
                .collect();
            candidates
                .sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let ranked: Vec<usize> = candidates.iter().take(max_k).map(|&(i, _)| i).collect();

            let recall = k_list.iter().map(|&k| recall_at_k(&ranked, truth, k)).collect();
            let ndcg = k_list.iter().map(|&k| ndcg_at_k(&ranked, truth, k)).collect();
            Some(UserMetrics {
                user: u,
                degree: dataset.train_degree(u),
                recall,
                ndcg,
            })
        })
        .collect();

    let users: Vec<UserMetrics> = per_user.into_iter().flatten().collect();
    if users.is_empty() {
        return Err(Error::EmptyReport);
    }

    let n = users.len() as f64;
    let mut recall = std::collections::BTreeMap::new();
    let mut ndcg = std::collections::BTreeMap::new();
    for (j, &k) in k_list.iter().enumerate() {
        recall.insert(k, users.iter().map(|m| m.recall[j]).sum::<f64>() / n);
        ndcg.insert(k, users.iter().map(|m| m.ndcg[j]).sum::<f64>() / n);
    }

    let buckets = degree_bucket_report(k_list, bucket_edges, &users)?;
    Ok(MetricsReport {
        phase,
        k_values: k_list.to_vec(),
        recall,
        ndcg,
        evaluated_users: users.len(),
        buckets,
        seed: None,
        config_hash: None,
    })
}

fn check_edges(bucket_edges: &[usize]) -> Result<()> {
    if bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "bucket edges must be strictly increasing".into(),
        ));
    }
    if bucket_edges.first() == Some(&0) {
        return Err(Error::InvalidParameter("bucket edges start at >= 1".into()));
    }
    Ok(())
}

/// Groups evaluated users by training degree into buckets bounded above by
/// `bucket_edges` (plus one open-ended bucket), and averages their metrics.
/// Degree-0 users land in the first bucket.
pub fn degree_bucket_report(
    k_list: &[usize],
    bucket_edges: &[usize],
    users: &[UserMetrics],
) -> Result<Vec<BucketReport>> {
    check_edges(bucket_edges)?;
    let num_buckets = bucket_edges.len() + 1;
    let bucket_of = |degree: usize| {
        bucket_edges
            .iter()
            .position(|&e| degree <= e)
            .unwrap_or(bucket_edges.len())
    };

    let mut grouped: Vec<Vec<&UserMetrics>> = vec![Vec::new(); num_buckets];
    for m in users {
        grouped[bucket_of(m.degree)].push(m);
    }

    let total = users.len() as f64;
    let mut out = Vec::with_capacity(num_buckets);
    for (b, members) in grouped.iter().enumerate() {
        let min_degree = if b == 0 { 0 } else { bucket_edges[b - 1] + 1 };
        let (max_degree, label) = if b < bucket_edges.len() {
            let hi = bucket_edges[b];
            (hi, format!("{}-{hi}", min_degree.max(1)))
        } else {
            (usize::MAX, format!("{}+", min_degree.max(1)))
        };
        let mut recall = std::collections::BTreeMap::new();
        let mut ndcg = std::collections::BTreeMap::new();
        let n = members.len() as f64;
        for (j, &k) in k_list.iter().enumerate() {
            let (r, g) = if members.is_empty() {
                (0.0, 0.0)
            } else {
                (
                    members.iter().map(|m| m.recall[j]).sum::<f64>() / n,
                    members.iter().map(|m| m.ndcg[j]).sum::<f64>() / n,
                )
            };
            recall.insert(k, r);
            ndcg.insert(k, g);
        }
        out.push(BucketReport {
            label,
            min_degree,
            max_degree,
            users: members.len(),
            share: members.len() as f64 / total,
            recall,
            ndcg,
        });
    }
    Ok(out)
}
