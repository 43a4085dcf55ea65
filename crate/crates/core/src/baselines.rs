//! Supervised pairwise baseline: BPR with uniformly sampled negatives over
//! the same encoders. This is the comparison point the self-supervised
//! trainer is meant to match without any negative sampling at all.

use std::time::Instant;

use crate::data::{Batch, InteractionDataset};
use crate::encoders::{encoder_backward_full, encoder_forward, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalPhase, MetricsReport};
use crate::graph::NormalizedAdjacency;
use crate::numerics::DenseMatrix;
use crate::rng::Rng;
use crate::selfcf::TrainState;

/// Uniform rejection sampler over each user's non-interacted items.
///
/// Membership is a binary search in the user's sorted training positives,
/// so every rejected candidate costs O(log degree); that per-draw cost is
/// exactly what a negative-free objective avoids.
pub struct NegativeSampler<'a> {
    dataset: &'a InteractionDataset,
    rng: Rng,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(dataset: &'a InteractionDataset, seed: u64) -> Self {
        NegativeSampler {
            dataset,
            rng: Rng::new(seed),
        }
    }

    /// Draws an item the user has no training interaction with, uniformly
    /// over all such items.
    pub fn sample_negative(&mut self, user: usize) -> Result<usize> {
        if user >= self.dataset.num_users {
            return Err(Error::InvalidIndex(format!(
                "user {user}, num_users = {}",
                self.dataset.num_users
            )));
        }
        let positives = self.dataset.train_positives(user);
        if positives.len() >= self.dataset.num_items {
            return Err(Error::ExhaustedSampler { user });
        }
        loop {
            let candidate = self.rng.next_below(self.dataset.num_items as u64) as usize;
            if positives.binary_search(&candidate).is_err() {
                return Ok(candidate);
            }
        }
    }
}

/// Loss and exact gradients of one BPR step.
pub struct BprGradients {
    pub loss: f64,
    pub user_grad: DenseMatrix,
    pub item_grad: DenseMatrix,
}

/// ln(1 + e^(-m)): the per-pair ranking loss, evaluated without overflow.
fn softplus_neg(m: f64) -> f64 {
    (-m).max(0.0) + (-m.abs()).exp().ln_1p()
}

fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Pure gradient computation for one batch of (user, positive) pairs with
/// pre-drawn negatives: loss = mean over pairs of −ln σ(x⁺ − x⁻) with
/// x = e_uᵀe_i on the propagated outputs, plus the same batch-row weight
/// decay as the self-supervised step.
pub fn bpr_step_gradients(
    params: &EncoderParams,
    adjacency: Option<&NormalizedAdjacency>,
    batch: &Batch,
    negatives: &[usize],
    l2: f64,
) -> Result<BprGradients> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    if negatives.len() != batch.len() {
        return Err(Error::InvalidDimension(format!(
            "{} negatives for {} pairs",
            negatives.len(),
            batch.len()
        )));
    }
    if !(l2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("l2 = {l2}")));
    }
    let (out, ctx) = encoder_forward(params, adjacency, batch)?;
    let neg_emb = out.item_full.select_rows(negatives)?;

    let b = batch.len();
    let bn = b as f64;
    let mut loss = 0.0;
    let mut grad_user_full = DenseMatrix::zeros(params.num_users(), params.d());
    let mut grad_item_full = DenseMatrix::zeros(params.num_items(), params.d());
    for k in 0..b {
        let eu = out.batch_users.row(k);
        let ep = out.batch_items.row(k);
        let en = neg_emb.row(k);
        let margin: f64 = eu
            .iter()
            .zip(ep.iter().zip(en))
            .map(|(u, (p, n))| u * (p - n))
            .sum();
        loss += softplus_neg(margin) / bn;
        // d/dm of mean softplus(-m)
        let g = (sigmoid(margin) - 1.0) / bn;

        let urow = grad_user_full.row_mut(batch.users[k]);
        for (dst, (p, n)) in urow.iter_mut().zip(ep.iter().zip(en)) {
            *dst += g * (p - n);
        }
        let prow = grad_item_full.row_mut(batch.items[k]);
        for (dst, &u) in prow.iter_mut().zip(eu) {
            *dst += g * u;
        }
        let nrow = grad_item_full.row_mut(negatives[k]);
        for (dst, &u) in nrow.iter_mut().zip(eu) {
            *dst -= g * u;
        }
    }

    let grads = encoder_backward_full(&ctx, &grad_user_full, &grad_item_full)?;
    let mut user_grad = grads.user_grad;
    let mut item_grad = grads.item_grad;

    if l2 > 0.0 {
        let mut sq = 0.0;
        for &u in &batch.users {
            let row = params.user_embed.row(u);
            sq += row.iter().map(|v| v * v).sum::<f64>();
            for (g, &v) in user_grad.row_mut(u).iter_mut().zip(row) {
                *g += l2 / bn * v;
            }
        }
        for idx in batch.items.iter().chain(negatives) {
            let row = params.item_embed.row(*idx);
            sq += row.iter().map(|v| v * v).sum::<f64>();
            for (g, &v) in item_grad.row_mut(*idx).iter_mut().zip(row) {
                *g += l2 / bn * v;
            }
        }
        loss += 0.5 * l2 * sq / bn;
    }

    Ok(BprGradients {
        loss,
        user_grad,
        item_grad,
    })
}

/// Samples one negative per positive and applies one Adam step.
pub fn bpr_train_step(
    state: &mut TrainState,
    adjacency: Option<&NormalizedAdjacency>,
    batch: &Batch,
    sampler: &mut NegativeSampler,
) -> Result<f64> {
    let negatives: Vec<usize> = batch
        .users
        .iter()
        .map(|&u| sampler.sample_negative(u))
        .collect::<Result<_>>()?;
    state.bpr_step(adjacency, batch, &negatives)
}

/// Ranking metrics for a supervised model: plain dot-product scores, no
/// predictor head.
pub fn evaluate_supervised(
    dataset: &InteractionDataset,
    user_full: &DenseMatrix,
    item_full: &DenseMatrix,
    k_list: &[usize],
    phase: EvalPhase,
    bucket_edges: &[usize],
) -> Result<MetricsReport> {
    evaluate(
        dataset, user_full, item_full, None, k_list, phase, bucket_edges,
    )
}

/// Mean nanoseconds per draw; exposed so callers can report how sampling
/// cost scales with the positive-set size.
pub fn time_sampling(sampler: &mut NegativeSampler, user: usize, draws: usize) -> Result<f64> {
    let started = Instant::now();
    for _ in 0..draws {
        sampler.sample_negative(user)?;
    }
    Ok(started.elapsed().as_nanos() as f64 / draws as f64)
}
