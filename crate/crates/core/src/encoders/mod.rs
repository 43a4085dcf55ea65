//! Backbone encoders shared by the online and target branches: an embedding
//! lookup (MF) and light graph convolution (propagate through the normalized
//! adjacency, average layers 0..L). Both come with exact analytic backward
//! passes; the propagation adjoint reuses the forward operator because the
//! adjacency is symmetric.

pub mod checkpoint;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::numerics::{xavier_init, DenseMatrix};
use crate::rng::{stream_seed, streams};

/// The learned backbone state: user and item embedding tables plus the
/// propagation depth (layers = 0 selects the plain lookup encoder).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub user_embed: DenseMatrix,
    pub item_embed: DenseMatrix,
    pub layers: usize,
}

impl EncoderParams {
    /// Xavier-initialized tables; user and item tables draw from separate
    /// streams of `seed`.
    pub fn init(
        num_users: usize,
        num_items: usize,
        d: usize,
        layers: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(EncoderParams {
            user_embed: xavier_init(num_users, d, stream_seed(seed, &[streams::INIT, 0]))?,
            item_embed: xavier_init(num_items, d, stream_seed(seed, &[streams::INIT, 1]))?,
            layers,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_embed.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_embed.rows()
    }

    pub fn d(&self) -> usize {
        self.user_embed.cols()
    }

    /// Embedding parameter count: (num_users + num_items) × d.
    pub fn embedding_param_count(&self) -> usize {
        (self.num_users() + self.num_items()) * self.d()
    }
}

/// Propagated (or raw, for lookup) full tables plus the batch-selected rows.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub user_full: DenseMatrix,
    pub item_full: DenseMatrix,
    pub batch_users: DenseMatrix,
    pub batch_items: DenseMatrix,
}

enum ContextKind<'a> {
    Lookup,
    Propagation {
        adjacency: &'a NormalizedAdjacency,
        layers: usize,
    },
}

/// What the backward pass needs from the forward pass: the batch indices and
/// the propagation operator. Produced only by a forward call.
pub struct ForwardContext<'a> {
    kind: ContextKind<'a>,
    batch_users: Vec<usize>,
    batch_items: Vec<usize>,
    num_users: usize,
    num_items: usize,
    d: usize,
}

impl ForwardContext<'_> {
    pub fn batch_len(&self) -> usize {
        self.batch_users.len()
    }

    pub fn batch_users(&self) -> &[usize] {
        &self.batch_users
    }

    pub fn batch_items(&self) -> &[usize] {
        &self.batch_items
    }

    /// The propagation operator, or `None` for the lookup encoder.
    pub fn adjacency(&self) -> Option<&NormalizedAdjacency> {
        match self.kind {
            ContextKind::Lookup => None,
            ContextKind::Propagation { adjacency, .. } => Some(adjacency),
        }
    }
}

/// Gradients w.r.t. the embedding tables, same shapes as [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub user_grad: DenseMatrix,
    pub item_grad: DenseMatrix,
}

fn check_batch(params: &EncoderParams, batch: &Batch) -> Result<()> {
    for &u in &batch.users {
        if u >= params.num_users() {
            return Err(Error::InvalidIndex(format!(
                "batch user {u}, table has {} rows",
                params.num_users()
            )));
        }
    }
    for &i in &batch.items {
        if i >= params.num_items() {
            return Err(Error::InvalidIndex(format!(
                "batch item {i}, table has {} rows",
                params.num_items()
            )));
        }
    }
    if batch.users.len() != batch.items.len() {
        return Err(Error::InvalidDimension(format!(
            "batch has {} users but {} items",
            batch.users.len(),
            batch.items.len()
        )));
    }
    Ok(())
}

/// Lookup encoder: full tables are the parameter tables themselves.
pub fn mf_forward(
    params: &EncoderParams,
    batch: &Batch,
) -> Result<(EncoderOutput, ForwardContext<'static>)> {
    check_batch(params, batch)?;
    let output = EncoderOutput {
        user_full: params.user_embed.clone(),
        item_full: params.item_embed.clone(),
        batch_users: params.user_embed.select_rows(&batch.users)?,
        batch_items: params.item_embed.select_rows(&batch.items)?,
    };
    let ctx = ForwardContext {
        kind: ContextKind::Lookup,
        batch_users: batch.users.clone(),
        batch_items: batch.items.clone(),
        num_users: params.num_users(),
        num_items: params.num_items(),
        d: params.d(),
    };
    Ok((output, ctx))
}

fn stack(params: &EncoderParams) -> DenseMatrix {
    let n = params.num_users() + params.num_items();
    let d = params.d();
    let mut e = DenseMatrix::zeros(n, d);
    for r in 0..params.num_users() {
        e.row_mut(r).copy_from_slice(params.user_embed.row(r));
    }
    for r in 0..params.num_items() {
        e.row_mut(params.num_users() + r)
            .copy_from_slice(params.item_embed.row(r));
    }
    e
}

fn split(stacked: &DenseMatrix, num_users: usize, num_items: usize) -> (DenseMatrix, DenseMatrix) {
    let d = stacked.cols();
    let mut user = DenseMatrix::zeros(num_users, d);
    let mut item = DenseMatrix::zeros(num_items, d);
    for r in 0..num_users {
        user.row_mut(r).copy_from_slice(stacked.row(r));
    }
    for r in 0..num_items {
        item.row_mut(r).copy_from_slice(stacked.row(num_users + r));
    }
    (user, item)
}

/// Layer-mean propagation: E^k = Â·E^{k−1} for k = 1..L, final embedding
/// = (1/(L+1))·Σ_k E^k.
fn propagate(adjacency: &NormalizedAdjacency, e0: DenseMatrix, layers: usize) -> Result<DenseMatrix> {
    let mut acc = e0.clone();
    let mut cur = e0;
    for _ in 0..layers {
        cur = adjacency.matrix().spmm(&cur)?;
        acc.add_scaled(&cur, 1.0)?;
    }
    acc.scale(1.0 / (layers + 1) as f64);
    Ok(acc)
}

/// Graph encoder forward: propagate the stacked tables, average layers,
/// split back, select batch rows.
pub fn lightgcn_forward<'a>(
    params: &EncoderParams,
    adjacency: &'a NormalizedAdjacency,
    batch: &Batch,
) -> Result<(EncoderOutput, ForwardContext<'a>)> {
    if params.layers == 0 {
        return Err(Error::InvalidParameter(
            "graph encoder needs layers >= 1; layers = 0 is the lookup encoder".into(),
        ));
    }
    if adjacency.dim() != params.num_users() + params.num_items() {
        return Err(Error::InvalidDimension(format!(
            "adjacency dim {} vs {} users + {} items",
            adjacency.dim(),
            params.num_users(),
            params.num_items()
        )));
    }
    check_batch(params, batch)?;

    let final_stacked = propagate(adjacency, stack(params), params.layers)?;
    let (user_full, item_full) = split(&final_stacked, params.num_users(), params.num_items());
    let output = EncoderOutput {
        batch_users: user_full.select_rows(&batch.users)?,
        batch_items: item_full.select_rows(&batch.items)?,
        user_full,
        item_full,
    };
    let ctx = ForwardContext {
        kind: ContextKind::Propagation {
            adjacency,
            layers: params.layers,
        },
        batch_users: batch.users.clone(),
        batch_items: batch.items.clone(),
        num_users: params.num_users(),
        num_items: params.num_items(),
        d: params.d(),
    };
    Ok((output, ctx))
}

/// Full output tables for every user and item, as used by evaluation and by
/// the collapse diagnostic. Equivalent to a forward pass with an empty batch.
pub fn full_tables(
    params: &EncoderParams,
    adjacency: Option<&NormalizedAdjacency>,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let empty = Batch {
        users: vec![],
        items: vec![],
    };
    let (out, _) = encoder_forward(params, adjacency, &empty)?;
    Ok((out.user_full, out.item_full))
}

/// Dispatches on `params.layers`: 0 is the lookup encoder, otherwise the
/// graph encoder (which then requires an adjacency).
pub fn encoder_forward<'a>(
    params: &EncoderParams,
    adjacency: Option<&'a NormalizedAdjacency>,
    batch: &Batch,
) -> Result<(EncoderOutput, ForwardContext<'a>)> {
    if params.layers == 0 {
        mf_forward(params, batch)
    } else {
        let adjacency = adjacency.ok_or_else(|| {
            Error::Config("graph encoder requires an adjacency operator".into())
        })?;
        lightgcn_forward(params, adjacency, batch)
    }
}

/// Backward from gradients w.r.t. the batch-selected rows. Scatters into
/// full-table positions (duplicates sum) and chains through the encoder.
pub fn encoder_backward(
    ctx: &ForwardContext,
    grad_batch_users: &DenseMatrix,
    grad_batch_items: &DenseMatrix,
) -> Result<EncoderGrads> {
    if grad_batch_users.rows() != ctx.batch_len()
        || grad_batch_items.rows() != ctx.batch_len()
        || grad_batch_users.cols() != ctx.d
        || grad_batch_items.cols() != ctx.d
    {
        return Err(Error::State(format!(
            "gradient shapes {}x{} / {}x{} do not match the recorded forward batch ({} x {})",
            grad_batch_users.rows(),
            grad_batch_users.cols(),
            grad_batch_items.rows(),
            grad_batch_items.cols(),
            ctx.batch_len(),
            ctx.d
        )));
    }
    let mut grad_user_full = DenseMatrix::zeros(ctx.num_users, ctx.d);
    let mut grad_item_full = DenseMatrix::zeros(ctx.num_items, ctx.d);
    for (k, &u) in ctx.batch_users.iter().enumerate() {
        let row = grad_batch_users.row(k);
        for (dst, &g) in grad_user_full.row_mut(u).iter_mut().zip(row) {
            *dst += g;
        }
    }
    for (k, &i) in ctx.batch_items.iter().enumerate() {
        let row = grad_batch_items.row(k);
        for (dst, &g) in grad_item_full.row_mut(i).iter_mut().zip(row) {
            *dst += g;
        }
    }
    encoder_backward_full(ctx, &grad_user_full, &grad_item_full)
}

/// Backward from gradients w.r.t. the FULL output tables (used when the
/// upstream touches every row, e.g. an extra propagation on the target
/// branch without stop-gradient). For the graph encoder this applies the
/// layer-mean adjoint: grad(E⁰) = (1/(L+1))·Σ_{k=0}^{L} Â^k·G.
pub fn encoder_backward_full(
    ctx: &ForwardContext,
    grad_user_full: &DenseMatrix,
    grad_item_full: &DenseMatrix,
) -> Result<EncoderGrads> {
    if grad_user_full.rows() != ctx.num_users
        || grad_item_full.rows() != ctx.num_items
        || grad_user_full.cols() != ctx.d
        || grad_item_full.cols() != ctx.d
    {
        return Err(Error::State(
            "full-table gradient shapes do not match the recorded forward".into(),
        ));
    }
    match ctx.kind {
        ContextKind::Lookup => Ok(EncoderGrads {
            user_grad: grad_user_full.clone(),
            item_grad: grad_item_full.clone(),
        }),
        ContextKind::Propagation { adjacency, layers } => {
            let n = ctx.num_users + ctx.num_items;
            let mut g = DenseMatrix::zeros(n, ctx.d);
            for r in 0..ctx.num_users {
                g.row_mut(r).copy_from_slice(grad_user_full.row(r));
            }
            for r in 0..ctx.num_items {
                g.row_mut(ctx.num_users + r)
                    .copy_from_slice(grad_item_full.row(r));
            }
            let acc = propagate(adjacency, g, layers)?;
            let (user_grad, item_grad) = split(&acc, ctx.num_users, ctx.num_items);
            Ok(EncoderGrads {
                user_grad,
                item_grad,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Interaction, InteractionDataset};
    use crate::graph::build_normalized_adjacency;
    use crate::numerics::{finite_diff_grad, max_rel_err};
    use crate::rng::Rng;

    fn dataset(num_users: usize, num_items: usize, pairs: &[(usize, usize)]) -> InteractionDataset {
        let train: Vec<Interaction> = pairs
            .iter()
            .enumerate()
            .map(|(k, &(user, item))| Interaction {
                user,
                item,
                timestamp: k as i64,
            })
            .collect();
        InteractionDataset::from_partitions(num_users, num_items, train, vec![], vec![]).unwrap()
    }

    fn random_params(num_users: usize, num_items: usize, d: usize, layers: usize, seed: u64) -> EncoderParams {
        EncoderParams::init(num_users, num_items, d, layers, seed).unwrap()
    }

    #[test]
    fn mf_lookup_is_verbatim() {
        let params = random_params(4, 5, 3, 0, 1);
        let batch = Batch {
            users: vec![2, 2],
            items: vec![4, 0],
        };
        let (out, _) = mf_forward(&params, &batch).unwrap();
        assert_eq!(out.batch_users.row(0), params.user_embed.row(2));
        assert_eq!(out.batch_users.row(1), params.user_embed.row(2));
        assert_eq!(out.batch_items.row(0), params.item_embed.row(4));
        assert_eq!(out.batch_items.row(1), params.item_embed.row(0));
    }

    #[test]
    fn mf_locality() {
        let mut params = random_params(4, 5, 3, 0, 1);
        let batch = Batch {
            users: vec![0],
            items: vec![1],
        };
        let (before, _) = mf_forward(&params, &batch).unwrap();
        params.user_embed.set(3, 0, 99.0);
        let (after, _) = mf_forward(&params, &batch).unwrap();
        assert_eq!(before.batch_users, after.batch_users);
        assert_eq!(before.batch_items, after.batch_items);
    }

    #[test]
    fn out_of_range_batch_rejected() {
        let params = random_params(2, 2, 3, 0, 1);
        let batch = Batch {
            users: vec![2],
            items: vec![0],
        };
        assert!(mf_forward(&params, &batch).is_err());
    }

    #[test]
    fn single_edge_one_layer_averages_endpoints() {
        let ds = dataset(1, 1, &[(0, 0)]);
        let adj = build_normalized_adjacency(&ds).unwrap();
        let mut params = random_params(1, 1, 2, 1, 3);
        params.user_embed = DenseMatrix::from_vec(1, 2, vec![2.0, 4.0]).unwrap();
        params.item_embed = DenseMatrix::from_vec(1, 2, vec![6.0, 0.0]).unwrap();
        let batch = Batch {
            users: vec![0],
            items: vec![0],
        };
        let (out, _) = lightgcn_forward(&params, &adj, &batch).unwrap();
        // Â swaps the two rows; layer mean = (e⁰ + swapped)/2
        assert_eq!(out.batch_users.row(0), &[4.0, 2.0]);
        assert_eq!(out.batch_items.row(0), &[4.0, 2.0]);
    }

    #[test]
    fn isolated_node_keeps_a_third_at_two_layers() {
        // item 2 has no training edge; with L = 2 its propagated layers are
        // zero, so the layer mean is e⁰/3
        let ds = dataset(2, 3, &[(0, 0), (1, 1)]);
        let adj = build_normalized_adjacency(&ds).unwrap();
        let mut params = random_params(2, 3, 2, 2, 4);
        params.item_embed = DenseMatrix::from_vec(
            3,
            2,
            vec![1.0, 2.0, 3.0, 4.0, 9.0, -6.0],
        )
        .unwrap();
        let batch = Batch {
            users: vec![0],
            items: vec![2],
        };
        let (out, _) = lightgcn_forward(&params, &adj, &batch).unwrap();
        assert!((out.batch_items.get(0, 0) - 3.0).abs() < 1e-15);
        assert!((out.batch_items.get(0, 1) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn linearity_in_layer_zero() {
        let ds = dataset(3, 4, &[(0, 0), (0, 1), (1, 1), (2, 3), (1, 2)]);
        let adj = build_normalized_adjacency(&ds).unwrap();
        let params = random_params(3, 4, 3, 2, 5);
        let batch = Batch {
            users: vec![0, 1, 2],
            items: vec![0, 2, 3],
        };
        let (base, _) = lightgcn_forward(&params, &adj, &batch).unwrap();

        // power-of-two scaling is exact in floating point
        let mut scaled = params.clone();
        scaled.user_embed.scale(2.0);
        scaled.item_embed.scale(2.0);
        let (doubled, _) = lightgcn_forward(&scaled, &adj, &batch).unwrap();
        let mut expect = base.user_full.clone();
        expect.scale(2.0);
        assert_eq!(doubled.user_full, expect);

        // general scaling to tolerance
        let alpha = 0.37;
        let mut scaled = params.clone();
        scaled.user_embed.scale(alpha);
        scaled.item_embed.scale(alpha);
        let (out, _) = lightgcn_forward(&scaled, &adj, &batch).unwrap();
        for (a, b) in out.item_full.values().iter().zip(base.item_full.values()) {
            assert!((a - alpha * b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_rows_match_full_tables() {
        let ds = dataset(3, 4, &[(0, 0), (0, 1), (1, 1), (2, 3)]);
        let adj = build_normalized_adjacency(&ds).unwrap();
        let params = random_params(3, 4, 3, 2, 6);
        let batch = Batch {
            users: vec![1, 2, 1],
            items: vec![3, 0, 1],
        };
        let (out, _) = lightgcn_forward(&params, &adj, &batch).unwrap();
        for (k, &u) in batch.users.iter().enumerate() {
            assert_eq!(out.batch_users.row(k), out.user_full.row(u));
        }
        for (k, &i) in batch.items.iter().enumerate() {
            assert_eq!(out.batch_items.row(k), out.item_full.row(i));
        }
    }

    #[test]
    fn layer_zero_dispatches_to_lookup() {
        let ds = dataset(2, 2, &[(0, 0), (1, 1)]);
        let adj = build_normalized_adjacency(&ds).unwrap();
        let params = random_params(2, 2, 3, 0, 7);
        let batch = Batch {
            users: vec![0, 1],
            items: vec![1, 0],
        };
        let (via_dispatch, _) = encoder_forward(&params, Some(&adj), &batch).unwrap();
        let (via_mf, _) = mf_forward(&params, &batch).unwrap();
        assert_eq!(via_dispatch.batch_users, via_mf.batch_users);
        assert_eq!(via_dispatch.user_full, via_mf.user_full);
        assert!(lightgcn_forward(&params, &adj, &batch).is_err());
    }

    #[test]
    fn mf_backward_scatters_and_sums_duplicates() {
        let params = random_params(3, 3, 2, 0, 8);
        let batch = Batch {
            users: vec![1, 1],
            items: vec![0, 2],
        };
        let (_, ctx) = mf_forward(&params, &batch).unwrap();
        let gu = DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 10.0, 20.0]).unwrap();
        let gi = DenseMatrix::from_vec(2, 2, vec![3.0, 4.0, 30.0, 40.0]).unwrap();
        let grads = encoder_backward(&ctx, &gu, &gi).unwrap();
        assert_eq!(grads.user_grad.row(1), &[11.0, 22.0]);
        assert_eq!(grads.user_grad.row(0), &[0.0, 0.0]);
        assert_eq!(grads.item_grad.row(0), &[3.0, 4.0]);
        assert_eq!(grads.item_grad.row(2), &[30.0, 40.0]);
    }

    #[test]
    fn backward_shape_mismatch_is_a_state_error() {
        let params = random_params(3, 3, 2, 0, 8);
        let batch = Batch {
            users: vec![1],
            items: vec![0],
        };
        let (_, ctx) = mf_forward(&params, &batch).unwrap();
        let wrong = DenseMatrix::zeros(2, 2);
        let ok = DenseMatrix::zeros(1, 2);
        assert!(matches!(
            encoder_backward(&ctx, &wrong, &ok),
            Err(crate::error::Error::State(_))
        ));
    }

    #[test]
    fn adjoint_identity() {
        // ⟨forward(X), G⟩ == ⟨X, backward(G)⟩ for the linear propagation
        let ds = dataset(4, 5, &[(0, 0), (0, 1), (1, 1), (2, 3), (3, 4), (1, 2)]);
        let adj = build_normalized_adjacency(&ds).unwrap();
        let d = 3;
        let mut rng = Rng::new(11);
        let mut fill = |rows: usize| {
            let mut m = DenseMatrix::zeros(rows, d);
            for v in m.values_mut() {
                *v = rng.next_f64() * 2.0 - 1.0;
            }
            m
        };
        let params = EncoderParams {
            user_embed: fill(4),
            item_embed: fill(5),
            layers: 2,
        };
        let gu = fill(4);
        let gi = fill(5);

        let batch = Batch {
            users: vec![0],
            items: vec![0],
        };
        let (out, ctx) = lightgcn_forward(&params, &adj, &batch).unwrap();
        let grads = encoder_backward_full(&ctx, &gu, &gi).unwrap();

        let lhs = out.user_full.dot(&gu).unwrap() + out.item_full.dot(&gi).unwrap();
        let rhs = params.user_embed.dot(&grads.user_grad).unwrap()
            + params.item_embed.dot(&grads.item_grad).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let ds = dataset(5, 7, &[(0, 0), (0, 1), (1, 1), (2, 3), (3, 4), (4, 6), (1, 5), (2, 2)]);
        let adj = build_normalized_adjacency(&ds).unwrap();
        let params = random_params(5, 7, 4, 2, 13);
        let batch = Batch {
            users: vec![0, 1, 4, 2, 3, 1],
            items: vec![1, 5, 6, 2, 4, 1],
        };

        // scalar probe: ⟨W_u, batch_users⟩ + ⟨W_i, batch_items⟩
        let mut rng = Rng::new(17);
        let mut wu = DenseMatrix::zeros(6, 4);
        let mut wi = DenseMatrix::zeros(6, 4);
        for v in wu.values_mut() {
            *v = rng.next_f64() * 2.0 - 1.0;
        }
        for v in wi.values_mut() {
            *v = rng.next_f64() * 2.0 - 1.0;
        }

        let (_, ctx) = lightgcn_forward(&params, &adj, &batch).unwrap();
        let analytic = encoder_backward(&ctx, &wu, &wi).unwrap();

        let loss_at = |user_embed: &DenseMatrix, item_embed: &DenseMatrix| {
            let p = EncoderParams {
                user_embed: user_embed.clone(),
                item_embed: item_embed.clone(),
                layers: 2,
            };
            let (out, _) = lightgcn_forward(&p, &adj, &batch).unwrap();
            Ok(out.batch_users.dot(&wu).unwrap() + out.batch_items.dot(&wi).unwrap())
        };

        let fd_user = finite_diff_grad(
            |u| loss_at(u, &params.item_embed),
            &params.user_embed,
            1e-5,
        )
        .unwrap();
        let fd_item = finite_diff_grad(
            |i| loss_at(&params.user_embed, i),
            &params.item_embed,
            1e-5,
        )
        .unwrap();
        assert!(max_rel_err(&analytic.user_grad, &fd_user) < 1e-6);
        assert!(max_rel_err(&analytic.item_grad, &fd_item) < 1e-6);
    }
}
