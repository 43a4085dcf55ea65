use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Norms are clamped here before division so zero vectors produce a zero
/// cosine instead of NaN.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Negative cosine similarity, the default objective. Values in [-1, 1].
    Cosine,
    /// Softmax cross-entropy between the two branches, treating the online
    /// row as logits and the target row as the reference distribution.
    CrossEntropy,
}

/// Loss value plus gradients for the four batch-sized inputs. Target
/// gradients are `None` under stop-gradient; the trainer then leaves the
/// target branch out of the backward pass entirely.
pub struct LossOutput {
    pub loss: f64,
    pub grad_online_users: DenseMatrix,
    pub grad_online_items: DenseMatrix,
    pub grad_target_users: Option<DenseMatrix>,
    pub grad_target_items: Option<DenseMatrix>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR)
}

/// C(a, b) = -a.b / (|a||b|) with the gradient for both arguments:
/// dC/da = -(b_hat - s a_hat)/|a| where s = a_hat.b_hat, symmetrically for b.
fn cosine_pair(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    let a_hat: Vec<f64> = a.iter().map(|x| x / na).collect();
    let b_hat: Vec<f64> = b.iter().map(|x| x / nb).collect();
    let s: f64 = a_hat.iter().zip(&b_hat).map(|(x, y)| x * y).sum();
    let grad_a: Vec<f64> = a_hat
        .iter()
        .zip(&b_hat)
        .map(|(&ah, &bh)| -(bh - s * ah) / na)
        .collect();
    let grad_b: Vec<f64> = a_hat
        .iter()
        .zip(&b_hat)
        .map(|(&ah, &bh)| -(ah - s * bh) / nb)
        .collect();
    (-s, grad_a, grad_b)
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - max - log_z).collect()
}

/// C(x, y) = -softmax(y) . log softmax(x). The logits side gets the familiar
/// p - q gradient; the distribution side gets -q_j (c_j - <c, q>) with
/// c = log softmax(x).
fn cross_entropy_pair(x: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let c = log_softmax(x);
    let p: Vec<f64> = c.iter().map(|v| v.exp()).collect();
    let q: Vec<f64> = log_softmax(y).iter().map(|v| v.exp()).collect();
    let loss: f64 = -q.iter().zip(&c).map(|(qj, cj)| qj * cj).sum::<f64>();
    let grad_x: Vec<f64> = p.iter().zip(&q).map(|(pj, qj)| pj - qj).collect();
    let cq: f64 = c.iter().zip(&q).map(|(cj, qj)| cj * qj).sum();
    let grad_y: Vec<f64> = c.iter().zip(&q).map(|(cj, qj)| -qj * (cj - cq)).collect();
    (loss, grad_x, grad_y)
}

fn check_same_shape(mats: &[&DenseMatrix]) -> Result<()> {
    let (rows, cols) = (mats[0].rows(), mats[0].cols());
    for m in mats {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::InvalidDimension(format!(
                "loss inputs disagree: {}x{} vs {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
    }
    if rows == 0 {
        return Err(Error::InvalidParameter("empty batch in loss".into()));
    }
    Ok(())
}

/// Symmetrized two-branch loss over a batch:
///
///   L = mean_k  1/2 C(online_user[k], target_item[k])
///             + 1/2 C(online_item[k], target_user[k])
///
/// The online row is always the first (differentiated-by-default) argument.
/// With `stop_gradient` the target rows are treated as constants, which is
/// what keeps the trivial collapse solution out of reach; without it the
/// target gradients are returned too and training is expected to degenerate.
pub fn symmetric_loss(
    kind: LossKind,
    online_users: &DenseMatrix,
    online_items: &DenseMatrix,
    target_users: &DenseMatrix,
    target_items: &DenseMatrix,
    stop_gradient: bool,
) -> Result<LossOutput> {
    check_same_shape(&[online_users, online_items, target_users, target_items])?;
    let b = online_users.rows();
    let d = online_users.cols();
    let pair = match kind {
        LossKind::Cosine => cosine_pair,
        LossKind::CrossEntropy => cross_entropy_pair,
    };

    let mut loss = 0.0;
    let mut g_ou = DenseMatrix::zeros(b, d);
    let mut g_oi = DenseMatrix::zeros(b, d);
    let mut g_tu = DenseMatrix::zeros(b, d);
    let mut g_ti = DenseMatrix::zeros(b, d);
    let half = 0.5 / b as f64;

    for k in 0..b {
        let (c1, d_ou, d_ti) = pair(online_users.row(k), target_items.row(k));
        let (c2, d_oi, d_tu) = pair(online_items.row(k), target_users.row(k));
        loss += half * (c1 + c2);
        for j in 0..d {
            g_ou.row_mut(k)[j] = half * d_ou[j];
            g_oi.row_mut(k)[j] = half * d_oi[j];
            g_ti.row_mut(k)[j] = half * d_ti[j];
            g_tu.row_mut(k)[j] = half * d_tu[j];
        }
    }

    if !loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok(LossOutput {
        loss,
        grad_online_users: g_ou,
        grad_online_items: g_oi,
        grad_target_users: if stop_gradient { None } else { Some(g_tu) },
        grad_target_items: if stop_gradient { None } else { Some(g_ti) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_rel_err};
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = Rng::new(seed);
        let mut m = DenseMatrix::zeros(rows, cols);
        for v in m.values_mut() {
            *v = rng.next_f64() * 2.0 - 1.0;
        }
        m
    }

    #[test]
    fn cosine_of_aligned_vectors_is_minus_one() {
        let (c, _, _) = cosine_pair(&[1.0, 2.0], &[2.0, 4.0]);
        assert!((c + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_of_orthogonal_vectors_is_zero() {
        let (c, _, _) = cosine_pair(&[1.0, 0.0], &[0.0, 3.0]);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn cosine_of_opposed_vectors_is_plus_one() {
        let (c, _, _) = cosine_pair(&[1.0, -1.0], &[-2.0, 2.0]);
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_stays_finite() {
        let (c, ga, gb) = cosine_pair(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(c, 0.0);
        assert!(ga.iter().all(|v| v.is_finite()));
        assert!(gb.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn symmetric_cosine_loss_bounds() {
        let ou = random(6, 4, 1);
        let oi = random(6, 4, 2);
        let tu = random(6, 4, 3);
        let ti = random(6, 4, 4);
        let out = symmetric_loss(LossKind::Cosine, &ou, &oi, &tu, &ti, true).unwrap();
        assert!(out.loss >= -1.0 && out.loss <= 1.0, "{}", out.loss);
        assert!(out.grad_target_users.is_none());
        assert!(out.grad_target_items.is_none());
    }

    #[test]
    fn perfectly_matched_branches_reach_minus_one() {
        let e = random(5, 3, 9);
        let out = symmetric_loss(LossKind::Cosine, &e, &e, &e, &e, true).unwrap();
        assert!((out.loss + 1.0).abs() < 1e-12);
    }

    fn fd_check_online(kind: LossKind) {
        let ou = random(3, 4, 11);
        let oi = random(3, 4, 12);
        let tu = random(3, 4, 13);
        let ti = random(3, 4, 14);

        let f_ou = |m: &DenseMatrix| {
            symmetric_loss(kind, m, &oi, &tu, &ti, true).map(|o| o.loss)
        };
        let out = symmetric_loss(kind, &ou, &oi, &tu, &ti, true).unwrap();
        let num = finite_diff_grad(f_ou, &ou, 1e-6).unwrap();
        assert!(max_rel_err(&out.grad_online_users, &num) < 1e-6);

        let f_oi = |m: &DenseMatrix| {
            symmetric_loss(kind, &ou, m, &tu, &ti, true).map(|o| o.loss)
        };
        let num = finite_diff_grad(f_oi, &oi, 1e-6).unwrap();
        assert!(max_rel_err(&out.grad_online_items, &num) < 1e-6);
    }

    fn fd_check_targets(kind: LossKind) {
        let ou = random(3, 4, 21);
        let oi = random(3, 4, 22);
        let tu = random(3, 4, 23);
        let ti = random(3, 4, 24);
        let out = symmetric_loss(kind, &ou, &oi, &tu, &ti, false).unwrap();

        let f_tu = |m: &DenseMatrix| {
            symmetric_loss(kind, &ou, &oi, m, &ti, false).map(|o| o.loss)
        };
        let num = finite_diff_grad(f_tu, &tu, 1e-6).unwrap();
        assert!(max_rel_err(out.grad_target_users.as_ref().unwrap(), &num) < 1e-6);

        let f_ti = |m: &DenseMatrix| {
            symmetric_loss(kind, &ou, &oi, &tu, m, false).map(|o| o.loss)
        };
        let num = finite_diff_grad(f_ti, &ti, 1e-6).unwrap();
        assert!(max_rel_err(out.grad_target_items.as_ref().unwrap(), &num) < 1e-6);
    }

    #[test]
    fn cosine_gradients_match_finite_differences() {
        fd_check_online(LossKind::Cosine);
        fd_check_targets(LossKind::Cosine);
    }

    #[test]
    fn cross_entropy_gradients_match_finite_differences() {
        fd_check_online(LossKind::CrossEntropy);
        fd_check_targets(LossKind::CrossEntropy);
    }

    #[test]
    fn stop_gradient_leaves_online_gradients_untouched() {
        let ou = random(4, 3, 31);
        let oi = random(4, 3, 32);
        let tu = random(4, 3, 33);
        let ti = random(4, 3, 34);
        let with = symmetric_loss(LossKind::Cosine, &ou, &oi, &tu, &ti, true).unwrap();
        let without = symmetric_loss(LossKind::Cosine, &ou, &oi, &tu, &ti, false).unwrap();
        assert_eq!(with.loss, without.loss);
        assert_eq!(with.grad_online_users, without.grad_online_users);
        assert_eq!(with.grad_online_items, without.grad_online_items);
        assert!(without.grad_target_users.is_some());
    }

    #[test]
    fn cross_entropy_is_nonnegative_and_matches_entropy_at_equality() {
        let x = [0.3, -1.2, 2.0, 0.1];
        let (c, _, _) = cross_entropy_pair(&x, &x);
        let q: Vec<f64> = log_softmax(&x).iter().map(|v| v.exp()).collect();
        let entropy: f64 = -q
            .iter()
            .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>();
        assert!(c >= 0.0);
        assert!((c - entropy).abs() < 1e-12);

        let y = [1.0, 0.0, -0.5, 0.3];
        let (c2, _, _) = cross_entropy_pair(&x, &y);
        assert!(c2 >= 0.0);
    }

    #[test]
    fn log_softmax_shift_invariant_and_stable() {
        let x = [1.0, 2.0, 3.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 1000.0).collect();
        let a = log_softmax(&x);
        let b = log_softmax(&shifted);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-9);
        }
        assert!(log_softmax(&[1e8, 0.0]).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = random(2, 3, 41);
        let b = random(3, 3, 42);
        assert!(matches!(
            symmetric_loss(LossKind::Cosine, &a, &b, &a, &a, true),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn empty_batch_rejected() {
        let e = DenseMatrix::zeros(0, 3);
        assert!(symmetric_loss(LossKind::Cosine, &e, &e, &e, &e, true).is_err());
    }
}
