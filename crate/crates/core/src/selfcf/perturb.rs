use crate::encoders::{EncoderOutput, ForwardContext};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseMatrix};
use crate::rng::Rng;

/// Momentum store for the historical-embedding perturbation: full-size
/// tables holding each entity's previous target value, with per-row seen
/// flags so a first touch degenerates to the current embedding.
#[derive(Debug, Clone)]
pub struct HistoricalStore {
    user_hist: DenseMatrix,
    item_hist: DenseMatrix,
    user_seen: Vec<bool>,
    item_seen: Vec<bool>,
    tau: f64,
    store_raw: bool,
}

impl HistoricalStore {
    /// `store_raw` switches the write-back from the mixed value Ẽ (the
    /// default, an exponential moving average) to the raw encoder output.
    pub fn new(
        num_users: usize,
        num_items: usize,
        d: usize,
        tau: f64,
        store_raw: bool,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!(
                "momentum tau must be in [0, 1], got {tau}"
            )));
        }
        Ok(HistoricalStore {
            user_hist: DenseMatrix::zeros(num_users, d),
            item_hist: DenseMatrix::zeros(num_items, d),
            user_seen: vec![false; num_users],
            item_seen: vec![false; num_items],
            tau,
            store_raw,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn user_seen(&self, u: usize) -> bool {
        self.user_seen[u]
    }

    pub fn item_seen(&self, i: usize) -> bool {
        self.item_seen[i]
    }

    fn mix(
        hist: &DenseMatrix,
        seen: &[bool],
        current: &DenseMatrix,
        indices: &[usize],
        tau: f64,
    ) -> Result<DenseMatrix> {
        if current.rows() != indices.len() {
            return Err(Error::InvalidDimension(format!(
                "{} embedding rows for {} batch indices",
                current.rows(),
                indices.len()
            )));
        }
        let mut out = current.clone();
        for (k, &idx) in indices.iter().enumerate() {
            if idx >= seen.len() {
                return Err(Error::InvalidIndex(format!(
                    "entity {idx} outside store of {} rows",
                    seen.len()
                )));
            }
            if seen[idx] {
                for (o, (&h, &e)) in out
                    .row_mut(k)
                    .iter_mut()
                    .zip(hist.row(idx).iter().zip(current.row(k)))
                {
                    *o = tau * h + (1.0 - tau) * e;
                }
            }
            // unseen rows keep Ẽ = E: history is defined as the current value
        }
        Ok(out)
    }

    /// Ẽ = τ·history + (1−τ)·E for every batch row, reading the store as it
    /// was before this batch. Pure; pair with [`commit`](Self::commit).
    pub fn compute(
        &self,
        batch_users_emb: &DenseMatrix,
        batch_items_emb: &DenseMatrix,
        users: &[usize],
        items: &[usize],
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        let tu = Self::mix(&self.user_hist, &self.user_seen, batch_users_emb, users, self.tau)?;
        let ti = Self::mix(&self.item_hist, &self.item_seen, batch_items_emb, items, self.tau)?;
        Ok((tu, ti))
    }

    /// Writes the batch rows back (mixed Ẽ by default, raw E with
    /// `store_raw`) and marks them seen.
    pub fn commit(
        &mut self,
        tilde_users: &DenseMatrix,
        tilde_items: &DenseMatrix,
        raw_users: &DenseMatrix,
        raw_items: &DenseMatrix,
        users: &[usize],
        items: &[usize],
    ) {
        let src_u = if self.store_raw { raw_users } else { tilde_users };
        let src_i = if self.store_raw { raw_items } else { tilde_items };
        for (k, &u) in users.iter().enumerate() {
            self.user_hist.row_mut(u).copy_from_slice(src_u.row(k));
            self.user_seen[u] = true;
        }
        for (k, &i) in items.iter().enumerate() {
            self.item_hist.row_mut(i).copy_from_slice(src_i.row(k));
            self.item_seen[i] = true;
        }
    }

    /// compute + commit in one call.
    pub fn perturb(
        &mut self,
        batch_users_emb: &DenseMatrix,
        batch_items_emb: &DenseMatrix,
        users: &[usize],
        items: &[usize],
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        let (tu, ti) = self.compute(batch_users_emb, batch_items_emb, users, items)?;
        self.commit(&tu, &ti, batch_users_emb, batch_items_emb, users, items);
        Ok((tu, ti))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutGranularity {
    Element,
    Row,
}

/// Inverted dropout: zero with probability p (per element or per row),
/// survivors scaled by 1/(1−p). Returns the perturbed matrix and the applied
/// mask-with-scale (entries 0 or 1/(1−p)), which is also the Jacobian
/// diagonal for the no-stop-gradient path.
pub fn dropout_with_mask(
    e: &DenseMatrix,
    p: f64,
    granularity: DropoutGranularity,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "dropout ratio must be in [0, 1), got {p}"
        )));
    }
    let mut mask = DenseMatrix::zeros(e.rows(), e.cols());
    if p == 0.0 {
        for v in mask.values_mut() {
            *v = 1.0;
        }
        return Ok((e.clone(), mask));
    }
    let scale = 1.0 / (1.0 - p);
    let mut rng = Rng::new(seed);
    match granularity {
        DropoutGranularity::Element => {
            for v in mask.values_mut() {
                *v = if rng.bernoulli(p) { 0.0 } else { scale };
            }
        }
        DropoutGranularity::Row => {
            for r in 0..mask.rows() {
                let keep = !rng.bernoulli(p);
                if keep {
                    for v in mask.row_mut(r) {
                        *v = scale;
                    }
                }
            }
        }
    }
    let mut out = e.clone();
    for (o, &m) in out.values_mut().iter_mut().zip(mask.values()) {
        *o *= m;
    }
    Ok((out, mask))
}

/// Dropout perturbation of batch embeddings; deterministic per seed.
pub fn perturb_dropout(
    e: &DenseMatrix,
    p: f64,
    granularity: DropoutGranularity,
    seed: u64,
) -> Result<DenseMatrix> {
    Ok(dropout_with_mask(e, p, granularity, seed)?.0)
}

/// Output of the edge-pruning perturbation: perturbed batch embeddings plus
/// the pruned operator (needed again by the no-stop-gradient backward).
pub struct EdgePruneResult {
    pub tilde_users: DenseMatrix,
    pub tilde_items: DenseMatrix,
    pub pruned: SparseMatrix,
}

/// One extra propagation of the full current output tables through a pruned
/// adjacency; batch rows selected from the result. Graph encoders only.
pub fn perturb_edge_prune(
    output: &EncoderOutput,
    ctx: &ForwardContext,
    rho: f64,
    seed: u64,
) -> Result<EdgePruneResult> {
    let adjacency = ctx.adjacency().ok_or_else(|| {
        Error::UnsupportedConfiguration(
            "edge pruning needs the graph encoder; the lookup encoder has no graph".into(),
        )
    })?;
    let pruned = adjacency.prune_edges(rho, seed)?;

    let num_users = output.user_full.rows();
    let num_items = output.item_full.rows();
    let d = output.user_full.cols();
    let mut stacked = DenseMatrix::zeros(num_users + num_items, d);
    for r in 0..num_users {
        stacked.row_mut(r).copy_from_slice(output.user_full.row(r));
    }
    for r in 0..num_items {
        stacked
            .row_mut(num_users + r)
            .copy_from_slice(output.item_full.row(r));
    }
    let propagated = pruned.spmm(&stacked)?;

    let mut tilde_users = DenseMatrix::zeros(ctx.batch_users().len(), d);
    for (k, &u) in ctx.batch_users().iter().enumerate() {
        tilde_users.row_mut(k).copy_from_slice(propagated.row(u));
    }
    let mut tilde_items = DenseMatrix::zeros(ctx.batch_items().len(), d);
    for (k, &i) in ctx.batch_items().iter().enumerate() {
        tilde_items
            .row_mut(k)
            .copy_from_slice(propagated.row(num_users + i));
    }
    Ok(EdgePruneResult {
        tilde_users,
        tilde_items,
        pruned,
    })
}
