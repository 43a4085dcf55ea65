//! Siamese training on implicit feedback without negative samples: one
//! shared encoder feeds an online branch (through the predictor h) and a
//! target branch (through an output perturbation); the symmetrized
//! stop-gradient loss pulls the branches together while the perturbation
//! and h keep the embeddings from collapsing.
//!
//! The differentiable core is [`step_gradients`], a pure function from
//! parameters and a fixed perturbation draw to the loss and exact gradients;
//! [`TrainState::train_step`] applies one Adam update on top of it, and
//! [`fit`] runs the epoch loop with validation-based early stopping.

pub mod loss;
pub mod perturb;
pub mod predictor;

pub use loss::{symmetric_loss, LossKind, LossOutput};
pub use perturb::{
    dropout_with_mask, perturb_dropout, perturb_edge_prune, DropoutGranularity, EdgePruneResult,
    HistoricalStore,
};
pub use predictor::{Predictor, PredictorAdam, PredictorContext, PredictorGrads};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{bpr_step_gradients, NegativeSampler};
use crate::data::{batch_iterator, Batch, InteractionDataset};
use crate::encoders::{encoder_backward_full, encoder_forward, full_tables, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalPhase, DEFAULT_BUCKET_EDGES};
use crate::graph::{build_normalized_adjacency, NormalizedAdjacency};
use crate::numerics::{adam_step, AdamState, DenseMatrix, SparseMatrix};
use crate::rng::{stream_seed, streams};

/// Backbone shape: embedding width and propagation depth (layers = 0 selects
/// the plain lookup encoder).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub embedding_dim: usize,
    pub layers: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            embedding_dim: 64,
            layers: 2,
        }
    }
}

/// Which output perturbation produces the target branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// Mix with the per-entity history: Ẽ = τ·previous + (1−τ)·current.
    Historical { tau: f64, store_raw: bool },
    /// Inverted dropout on the batch output embeddings.
    Dropout {
        p: f64,
        granularity: DropoutGranularity,
    },
    /// One extra propagation through a randomly pruned adjacency.
    EdgePrune { rho: f64 },
}

impl Perturbation {
    pub fn validate(&self, layers: usize) -> Result<()> {
        match *self {
            Perturbation::Historical { tau, .. } => {
                if !(0.0..=1.0).contains(&tau) {
                    return Err(Error::InvalidParameter(format!("tau = {tau}")));
                }
            }
            Perturbation::Dropout { p, .. } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::InvalidParameter(format!("dropout ratio = {p}")));
                }
            }
            Perturbation::EdgePrune { rho } => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::InvalidParameter(format!("prune ratio = {rho}")));
                }
                if layers == 0 {
                    return Err(Error::UnsupportedConfiguration(
                        "edge pruning requires the graph encoder (layers >= 1)".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Shape of the online-branch head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorMode {
    /// One trained linear map, the default.
    Linear,
    /// h = identity: no head at all (the "no predictor" ablation).
    Identity,
    /// Random linear map that is never updated.
    FixedRandom,
    /// Linear-ReLU-linear, trained.
    TwoLayer,
}

/// What the training loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    SelfSupervised {
        perturbation: Perturbation,
        predictor: PredictorMode,
        loss: LossKind,
        stop_gradient: bool,
    },
    /// Pairwise ranking with sampled negatives, the supervised baseline.
    SupervisedBpr,
}

/// The realized randomness of one batch's perturbation. Fixing a draw makes
/// the step loss a deterministic function of the parameters, which is what
/// the finite-difference checks differentiate.
#[derive(Debug, Clone, Copy)]
pub enum BatchPerturbation {
    /// Reads the historical store as it was before the batch.
    Historical,
    Dropout {
        p: f64,
        granularity: DropoutGranularity,
        seed_users: u64,
        seed_items: u64,
    },
    EdgePrune { rho: f64, seed: u64 },
}

/// Loss and exact gradients for one batch under a fixed perturbation draw.
pub struct StepGradients {
    pub loss: f64,
    /// Gradient w.r.t. the layer-0 user table, full shape.
    pub user_grad: DenseMatrix,
    pub item_grad: DenseMatrix,
    pub predictor_grads: Option<PredictorGrads>,
    /// Realized target branch, needed to commit the historical store.
    pub tilde_users: DenseMatrix,
    pub tilde_items: DenseMatrix,
    /// Encoder output rows for the batch (pre-predictor, pre-perturbation).
    pub batch_users_emb: DenseMatrix,
    pub batch_items_emb: DenseMatrix,
}

fn online_branch(
    predictor: Option<&Predictor>,
    e: &DenseMatrix,
) -> Result<(DenseMatrix, Option<PredictorContext>)> {
    match predictor {
        Some(h) => {
            let (out, ctx) = h.forward_ctx(e)?;
            Ok((out, Some(ctx)))
        }
        None => Ok((e.clone(), None)),
    }
}

fn scatter_add(target: &mut DenseMatrix, indices: &[usize], rows: &DenseMatrix) {
    for (k, &idx) in indices.iter().enumerate() {
        for (dst, &g) in target.row_mut(idx).iter_mut().zip(rows.row(k)) {
            *dst += g;
        }
    }
}

/// ½λ·mean over batch occurrences of the squared layer-0 row norms. Duplicate
/// entities in a batch are counted once per occurrence.
fn l2_penalty(params: &EncoderParams, batch: &Batch, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let mut sq = 0.0;
    for &u in &batch.users {
        sq += params.user_embed.row(u).iter().map(|v| v * v).sum::<f64>();
    }
    for &i in &batch.items {
        sq += params.item_embed.row(i).iter().map(|v| v * v).sum::<f64>();
    }
    0.5 * l2 * sq / batch.len() as f64
}

enum TargetMeta {
    Historical,
    Dropout {
        mask_users: DenseMatrix,
        mask_items: DenseMatrix,
    },
    Pruned(SparseMatrix),
}

/// Loss and exact gradients of one training step, without applying any
/// update. The perturbation draw is explicit so the same step can be
/// re-evaluated at perturbed parameters (finite differences) or replayed.
///
/// With `stop_gradient`, gradients flow only through the online branch
/// (encoder → predictor); without it, the target branch contributes too,
/// with the dropout mask and the pruned adjacency treated as constants of
/// the draw.
#[allow(clippy::too_many_arguments)]
pub fn step_gradients(
    params: &EncoderParams,
    predictor: Option<&Predictor>,
    adjacency: Option<&NormalizedAdjacency>,
    store: Option<&HistoricalStore>,
    batch: &Batch,
    draw: &BatchPerturbation,
    loss_kind: LossKind,
    stop_gradient: bool,
    l2: f64,
) -> Result<StepGradients> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    if !(l2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("l2 = {l2}")));
    }
    let (out, ctx) = encoder_forward(params, adjacency, batch)?;

    let (tilde_users, tilde_items, meta) = match *draw {
        BatchPerturbation::Historical => {
            let store = store.ok_or_else(|| {
                Error::State("historical perturbation drawn without a store".into())
            })?;
            let (tu, ti) = store.compute(
                &out.batch_users,
                &out.batch_items,
                &batch.users,
                &batch.items,
            )?;
            (tu, ti, TargetMeta::Historical)
        }
        BatchPerturbation::Dropout {
            p,
            granularity,
            seed_users,
            seed_items,
        } => {
            let (tu, mask_users) = dropout_with_mask(&out.batch_users, p, granularity, seed_users)?;
            let (ti, mask_items) = dropout_with_mask(&out.batch_items, p, granularity, seed_items)?;
            (
                tu,
                ti,
                TargetMeta::Dropout {
                    mask_users,
                    mask_items,
                },
            )
        }
        BatchPerturbation::EdgePrune { rho, seed } => {
            let pruned = perturb_edge_prune(&out, &ctx, rho, seed)?;
            (
                pruned.tilde_users,
                pruned.tilde_items,
                TargetMeta::Pruned(pruned.pruned),
            )
        }
    };

    let (online_users, pctx_users) = online_branch(predictor, &out.batch_users)?;
    let (online_items, pctx_items) = online_branch(predictor, &out.batch_items)?;
    let lo = symmetric_loss(
        loss_kind,
        &online_users,
        &online_items,
        &tilde_users,
        &tilde_items,
        stop_gradient,
    )?;

    // online path: back through the predictor, then scatter into the full
    // output tables
    let (predictor_grads, grad_emb_users, grad_emb_items) = match predictor {
        Some(h) => {
            let (mut pg, gu) = h.backward(pctx_users.as_ref().unwrap(), &lo.grad_online_users)?;
            let (pg_items, gi) = h.backward(pctx_items.as_ref().unwrap(), &lo.grad_online_items)?;
            pg.add(&pg_items)?;
            (Some(pg), gu, gi)
        }
        None => (None, lo.grad_online_users, lo.grad_online_items),
    };

    let mut grad_user_full = DenseMatrix::zeros(params.num_users(), params.d());
    let mut grad_item_full = DenseMatrix::zeros(params.num_items(), params.d());
    scatter_add(&mut grad_user_full, &batch.users, &grad_emb_users);
    scatter_add(&mut grad_item_full, &batch.items, &grad_emb_items);

    // target path, only without stop-gradient: chain through the perturbation
    if let (Some(gtu), Some(gti)) = (&lo.grad_target_users, &lo.grad_target_items) {
        match &meta {
            TargetMeta::Historical => {
                let store = store.expect("checked above");
                let tau = store.tau();
                for (k, &u) in batch.users.iter().enumerate() {
                    let scale = if store.user_seen(u) { 1.0 - tau } else { 1.0 };
                    for (dst, &g) in grad_user_full.row_mut(u).iter_mut().zip(gtu.row(k)) {
                        *dst += scale * g;
                    }
                }
                for (k, &i) in batch.items.iter().enumerate() {
                    let scale = if store.item_seen(i) { 1.0 - tau } else { 1.0 };
                    for (dst, &g) in grad_item_full.row_mut(i).iter_mut().zip(gti.row(k)) {
                        *dst += scale * g;
                    }
                }
            }
            TargetMeta::Dropout {
                mask_users,
                mask_items,
            } => {
                for (k, &u) in batch.users.iter().enumerate() {
                    for ((dst, &g), &m) in grad_user_full
                        .row_mut(u)
                        .iter_mut()
                        .zip(gtu.row(k))
                        .zip(mask_users.row(k))
                    {
                        *dst += m * g;
                    }
                }
                for (k, &i) in batch.items.iter().enumerate() {
                    for ((dst, &g), &m) in grad_item_full
                        .row_mut(i)
                        .iter_mut()
                        .zip(gti.row(k))
                        .zip(mask_items.row(k))
                    {
                        *dst += m * g;
                    }
                }
            }
            TargetMeta::Pruned(pruned) => {
                // tilde = select(pruned · stacked); the pruned operator is
                // symmetric, so its adjoint is itself
                let n = params.num_users() + params.num_items();
                let mut scattered = DenseMatrix::zeros(n, params.d());
                scatter_add(&mut scattered, &batch.users, gtu);
                let shifted: Vec<usize> =
                    batch.items.iter().map(|&i| params.num_users() + i).collect();
                scatter_add(&mut scattered, &shifted, gti);
                let back = pruned.spmm(&scattered)?;
                for r in 0..params.num_users() {
                    for (dst, &g) in grad_user_full.row_mut(r).iter_mut().zip(back.row(r)) {
                        *dst += g;
                    }
                }
                for r in 0..params.num_items() {
                    for (dst, &g) in grad_item_full
                        .row_mut(r)
                        .iter_mut()
                        .zip(back.row(params.num_users() + r))
                    {
                        *dst += g;
                    }
                }
            }
        }
    }

    let grads = encoder_backward_full(&ctx, &grad_user_full, &grad_item_full)?;
    let mut user_grad = grads.user_grad;
    let mut item_grad = grads.item_grad;

    // weight decay acts on the layer-0 rows directly, not through the
    // propagation adjoint
    let mut total_loss = lo.loss;
    if l2 > 0.0 {
        let bn = batch.len() as f64;
        for &u in &batch.users {
            for (g, &v) in user_grad
                .row_mut(u)
                .iter_mut()
                .zip(params.user_embed.row(u))
            {
                *g += l2 / bn * v;
            }
        }
        for &i in &batch.items {
            for (g, &v) in item_grad
                .row_mut(i)
                .iter_mut()
                .zip(params.item_embed.row(i))
            {
                *g += l2 / bn * v;
            }
        }
        total_loss += l2_penalty(params, batch, l2);
    }

    Ok(StepGradients {
        loss: total_loss,
        user_grad,
        item_grad,
        predictor_grads,
        tilde_users,
        tilde_items,
        batch_users_emb: out.batch_users,
        batch_items_emb: out.batch_items,
    })
}

/// The step loss with the target branch pinned to explicit constants. This
/// is the surrogate whose finite differences the stop-gradient gradients
/// must match.
#[allow(clippy::too_many_arguments)]
pub fn frozen_target_loss(
    params: &EncoderParams,
    predictor: Option<&Predictor>,
    adjacency: Option<&NormalizedAdjacency>,
    batch: &Batch,
    tilde_users: &DenseMatrix,
    tilde_items: &DenseMatrix,
    loss_kind: LossKind,
    l2: f64,
) -> Result<f64> {
    let (out, _) = encoder_forward(params, adjacency, batch)?;
    let (online_users, _) = online_branch(predictor, &out.batch_users)?;
    let (online_items, _) = online_branch(predictor, &out.batch_items)?;
    let lo = symmetric_loss(
        loss_kind,
        &online_users,
        &online_items,
        tilde_users,
        tilde_items,
        true,
    )?;
    Ok(lo.loss + l2_penalty(params, batch, l2))
}

/// Optimizer hyperparameters and loop control. The model shape lives in
/// [`ModelSpec`] and the objective in [`Objective`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping; 0 stops
    /// at the first epoch that fails to improve validation recall.
    pub patience: usize,
    /// K of the validation Recall@K used for model selection.
    pub validation_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2048,
            learning_rate: 1e-3,
            l2: 1e-4,
            max_epochs: 1000,
            patience: 50,
            validation_k: 20,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning_rate = {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::InvalidParameter(format!("l2 = {}", self.l2)));
        }
        if self.validation_k == 0 {
            return Err(Error::InvalidParameter("validation_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mutable training state: parameters, optional head and historical store,
/// and the Adam moments for each table.
pub struct TrainState {
    pub params: EncoderParams,
    pub predictor: Option<Predictor>,
    pub predictor_trainable: bool,
    pub store: Option<HistoricalStore>,
    pub loss_kind: LossKind,
    pub stop_gradient: bool,
    pub l2: f64,
    pub(crate) user_adam: AdamState,
    pub(crate) item_adam: AdamState,
    pub(crate) predictor_adam: Option<PredictorAdam>,
}

impl TrainState {
    pub fn new(
        num_users: usize,
        num_items: usize,
        model: &ModelSpec,
        objective: &Objective,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = model.embedding_dim;
        let params = EncoderParams::init(num_users, num_items, d, model.layers, cfg.seed)?;

        let (predictor, predictor_trainable, store, loss_kind, stop_gradient) = match *objective {
            Objective::SelfSupervised {
                perturbation,
                predictor: mode,
                loss,
                stop_gradient,
            } => {
                perturbation.validate(model.layers)?;
                let (head, trainable) = match mode {
                    PredictorMode::Linear => (Some(Predictor::linear(d, cfg.seed)?), true),
                    PredictorMode::Identity => (None, false),
                    PredictorMode::FixedRandom => (Some(Predictor::linear(d, cfg.seed)?), false),
                    PredictorMode::TwoLayer => (Some(Predictor::two_layer(d, cfg.seed)?), true),
                };
                let store = match perturbation {
                    Perturbation::Historical { tau, store_raw } => Some(HistoricalStore::new(
                        num_users, num_items, d, tau, store_raw,
                    )?),
                    _ => None,
                };
                (head, trainable, store, loss, stop_gradient)
            }
            Objective::SupervisedBpr => (None, false, None, LossKind::Cosine, true),
        };

        let user_adam = AdamState::new(num_users, d, cfg.learning_rate);
        let item_adam = AdamState::new(num_items, d, cfg.learning_rate);
        let predictor_adam = match (&predictor, predictor_trainable) {
            (Some(h), true) => Some(h.adam_states(cfg.learning_rate)),
            _ => None,
        };
        Ok(TrainState {
            params,
            predictor,
            predictor_trainable,
            store,
            loss_kind,
            stop_gradient,
            l2: cfg.l2,
            user_adam,
            item_adam,
            predictor_adam,
        })
    }

    /// One self-supervised step: gradients under the given draw, one Adam
    /// update per trainable table, historical store committed afterwards.
    pub fn train_step(
        &mut self,
        adjacency: Option<&NormalizedAdjacency>,
        batch: &Batch,
        draw: &BatchPerturbation,
    ) -> Result<f64> {
        let sg = step_gradients(
            &self.params,
            self.predictor.as_ref(),
            adjacency,
            self.store.as_ref(),
            batch,
            draw,
            self.loss_kind,
            self.stop_gradient,
            self.l2,
        )?;
        adam_step(&mut self.params.user_embed, &sg.user_grad, &mut self.user_adam)?;
        adam_step(&mut self.params.item_embed, &sg.item_grad, &mut self.item_adam)?;
        if self.predictor_trainable {
            if let (Some(h), Some(pg), Some(pa)) = (
                self.predictor.as_mut(),
                &sg.predictor_grads,
                self.predictor_adam.as_mut(),
            ) {
                h.adam_update(pg, pa)?;
            }
        }
        if matches!(draw, BatchPerturbation::Historical) {
            if let Some(store) = self.store.as_mut() {
                store.commit(
                    &sg.tilde_users,
                    &sg.tilde_items,
                    &sg.batch_users_emb,
                    &sg.batch_items_emb,
                    &batch.users,
                    &batch.items,
                );
            }
        }
        Ok(sg.loss)
    }

    /// One supervised pairwise step with pre-drawn negatives.
    pub fn bpr_step(
        &mut self,
        adjacency: Option<&NormalizedAdjacency>,
        batch: &Batch,
        negatives: &[usize],
    ) -> Result<f64> {
        let sg = bpr_step_gradients(&self.params, adjacency, batch, negatives, self.l2)?;
        adam_step(&mut self.params.user_embed, &sg.user_grad, &mut self.user_adam)?;
        adam_step(&mut self.params.item_embed, &sg.item_grad, &mut self.item_adam)?;
        Ok(sg.loss)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(rename = "val_recall@20")]
    pub val_recall: f64,
    /// Mean per-coordinate std of the propagated user embeddings; the
    /// collapse diagnostic.
    pub embed_std: f64,
    pub seconds: f64,
}

/// Outcome of [`fit`]: the best-validation parameters and the full log.
pub struct FitResult {
    pub params: EncoderParams,
    pub predictor: Option<Predictor>,
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters are returned; 0 means the untrained init was
    /// never beaten.
    pub best_epoch: usize,
    pub best_val_recall: f64,
    /// Validation recall of the untrained initialization.
    pub initial_val_recall: f64,
}

fn mean_column_std(m: &DenseMatrix) -> f64 {
    let stds = m.column_stds();
    if stds.is_empty() {
        return 0.0;
    }
    stds.iter().sum::<f64>() / stds.len() as f64
}

fn draw_for_batch(
    perturbation: &Perturbation,
    seed: u64,
    epoch: usize,
    batch_idx: usize,
) -> BatchPerturbation {
    let (e, b) = (epoch as u64, batch_idx as u64);
    match *perturbation {
        Perturbation::Historical { .. } => BatchPerturbation::Historical,
        Perturbation::Dropout { p, granularity } => BatchPerturbation::Dropout {
            p,
            granularity,
            seed_users: stream_seed(seed, &[streams::DROPOUT, e, b, 0]),
            seed_items: stream_seed(seed, &[streams::DROPOUT, e, b, 1]),
        },
        Perturbation::EdgePrune { rho } => BatchPerturbation::EdgePrune {
            rho,
            seed: stream_seed(seed, &[streams::PRUNE, e, b]),
        },
    }
}

/// Trains with early stopping on validation Recall@K. Keeps the parameters
/// of the best validation epoch (including the untrained initialization as
/// epoch 0) and stops after `patience` consecutive epochs without strict
/// improvement, or at `max_epochs`.
pub fn fit(
    dataset: &InteractionDataset,
    model: &ModelSpec,
    objective: &Objective,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if let Objective::SelfSupervised { perturbation, .. } = objective {
        perturbation.validate(model.layers)?;
    }
    let adjacency = if model.layers > 0 {
        Some(build_normalized_adjacency(dataset)?)
    } else {
        None
    };
    let mut state = TrainState::new(dataset.num_users, dataset.num_items, model, objective, cfg)?;
    let mut sampler = match objective {
        Objective::SupervisedBpr => Some(NegativeSampler::new(
            dataset,
            stream_seed(cfg.seed, &[streams::NEGATIVE]),
        )),
        _ => None,
    };

    let validation_pass = |params: &EncoderParams, head: Option<&Predictor>| -> Result<(f64, f64)> {
        let (user_full, item_full) = full_tables(params, adjacency.as_ref())?;
        let embed_std = mean_column_std(&user_full);
        let report = evaluate(
            dataset,
            &user_full,
            &item_full,
            head,
            &[cfg.validation_k],
            EvalPhase::Validation,
            &DEFAULT_BUCKET_EDGES,
        )?;
        let recall = report.recall.get(&cfg.validation_k).copied().ok_or_else(|| {
            Error::State(format!("validation report lacks K = {}", cfg.validation_k))
        })?;
        Ok((recall, embed_std))
    };

    let (initial_val_recall, _) = validation_pass(&state.params, state.predictor.as_ref())?;
    let mut best_val_recall = initial_val_recall;
    let mut best_epoch = 0usize;
    let mut best_params = state.params.clone();
    let mut best_predictor = state.predictor.clone();
    let mut bad_epochs = 0usize;
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let epoch_seed = stream_seed(cfg.seed, &[streams::SHUFFLE, epoch as u64]);
        let mut loss_weighted = 0.0;
        let mut pair_count = 0usize;
        for (batch_idx, batch) in batch_iterator(dataset, cfg.batch_size, epoch_seed)?.enumerate() {
            let loss = match objective {
                Objective::SelfSupervised { perturbation, .. } => {
                    let draw = draw_for_batch(perturbation, cfg.seed, epoch, batch_idx);
                    state.train_step(adjacency.as_ref(), &batch, &draw)?
                }
                Objective::SupervisedBpr => {
                    let sampler = sampler.as_mut().expect("constructed for bpr");
                    let negatives: Vec<usize> = batch
                        .users
                        .iter()
                        .map(|&u| sampler.sample_negative(u))
                        .collect::<Result<_>>()?;
                    state.bpr_step(adjacency.as_ref(), &batch, &negatives)?
                }
            };
            loss_weighted += loss * batch.len() as f64;
            pair_count += batch.len();
        }
        let epoch_loss = loss_weighted / pair_count as f64;

        let (val_recall, embed_std) = validation_pass(&state.params, state.predictor.as_ref())?;
        log.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            val_recall,
            embed_std,
            seconds: started.elapsed().as_secs_f64(),
        });

        if val_recall > best_val_recall {
            best_val_recall = val_recall;
            best_epoch = epoch;
            best_params = state.params.clone();
            best_predictor = state.predictor.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }

    Ok(FitResult {
        params: best_params,
        predictor: best_predictor,
        log,
        best_epoch,
        best_val_recall,
        initial_val_recall,
    })
}
