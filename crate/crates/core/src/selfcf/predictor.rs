use crate::error::{Error, Result};
use crate::numerics::{adam_step, xavier_init, AdamState, DenseMatrix};
use crate::rng::{stream_seed, streams};

/// The online-branch head h, applied identically to user and item
/// embeddings. The default is one linear map (weight + bias); the two-layer
/// variant (linear, ReLU, linear) exists for the predictor ablation.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Linear {
        weight: DenseMatrix, // d×d
        bias: DenseMatrix,   // 1×d
    },
    TwoLayer {
        w1: DenseMatrix,
        b1: DenseMatrix,
        w2: DenseMatrix,
        b2: DenseMatrix,
    },
}

/// Forward state needed by the backward pass.
pub struct PredictorContext {
    input: DenseMatrix,
    hidden_pre: Option<DenseMatrix>,
}

/// Gradients w.r.t. the predictor's own parameters, same layout.
#[derive(Debug, Clone)]
pub enum PredictorGrads {
    Linear {
        weight: DenseMatrix,
        bias: DenseMatrix,
    },
    TwoLayer {
        w1: DenseMatrix,
        b1: DenseMatrix,
        w2: DenseMatrix,
        b2: DenseMatrix,
    },
}

/// Adam state per predictor table.
pub enum PredictorAdam {
    Linear {
        weight: AdamState,
        bias: AdamState,
    },
    TwoLayer {
        w1: AdamState,
        b1: AdamState,
        w2: AdamState,
        b2: AdamState,
    },
}

impl Predictor {
    pub fn linear(d: usize, seed: u64) -> Result<Self> {
        Ok(Predictor::Linear {
            weight: xavier_init(d, d, stream_seed(seed, &[streams::INIT, 2]))?,
            bias: DenseMatrix::zeros(1, d),
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut weight = DenseMatrix::zeros(d, d);
        for i in 0..d {
            weight.set(i, i, 1.0);
        }
        Predictor::Linear {
            weight,
            bias: DenseMatrix::zeros(1, d),
        }
    }

    pub fn two_layer(d: usize, seed: u64) -> Result<Self> {
        Ok(Predictor::TwoLayer {
            w1: xavier_init(d, d, stream_seed(seed, &[streams::INIT, 3]))?,
            b1: DenseMatrix::zeros(1, d),
            w2: xavier_init(d, d, stream_seed(seed, &[streams::INIT, 4]))?,
            b2: DenseMatrix::zeros(1, d),
        })
    }

    pub fn d(&self) -> usize {
        match self {
            Predictor::Linear { weight, .. } => weight.rows(),
            Predictor::TwoLayer { w1, .. } => w1.rows(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Predictor::Linear { weight, bias } => {
                weight.rows() * weight.cols() + bias.cols()
            }
            Predictor::TwoLayer { w1, b1, w2, b2 } => {
                w1.rows() * w1.cols()
                    + b1.cols()
                    + w2.rows() * w2.cols()
                    + b2.cols()
            }
        }
    }

    fn affine(e: &DenseMatrix, w: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = e.matmul(w)?;
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.row(0)) {
                *o += bv;
            }
        }
        Ok(out)
    }

    /// Pure forward: E·W + b per row (two-layer inserts a ReLU hidden map).
    pub fn forward(&self, e: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_ctx(e)?.0)
    }

    pub fn forward_ctx(&self, e: &DenseMatrix) -> Result<(DenseMatrix, PredictorContext)> {
        if e.cols() != self.d() {
            return Err(Error::InvalidDimension(format!(
                "predictor expects {} columns, got {}",
                self.d(),
                e.cols()
            )));
        }
        match self {
            Predictor::Linear { weight, bias } => {
                let out = Self::affine(e, weight, bias)?;
                Ok((
                    out,
                    PredictorContext {
                        input: e.clone(),
                        hidden_pre: None,
                    },
                ))
            }
            Predictor::TwoLayer { w1, b1, w2, b2 } => {
                let pre = Self::affine(e, w1, b1)?;
                let mut hidden = pre.clone();
                for v in hidden.values_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let out = Self::affine(&hidden, w2, b2)?;
                Ok((
                    out,
                    PredictorContext {
                        input: e.clone(),
                        hidden_pre: Some(pre),
                    },
                ))
            }
        }
    }

    /// Backward through h: returns parameter gradients and the gradient
    /// w.r.t. the input embeddings.
    pub fn backward(
        &self,
        ctx: &PredictorContext,
        grad_out: &DenseMatrix,
    ) -> Result<(PredictorGrads, DenseMatrix)> {
        if grad_out.rows() != ctx.input.rows() || grad_out.cols() != self.d() {
            return Err(Error::State(
                "predictor backward does not match the recorded forward".into(),
            ));
        }
        match self {
            Predictor::Linear { weight, .. } => {
                let grad_w = ctx.input.matmul_tn(grad_out)?;
                let grad_b =
                    DenseMatrix::from_vec(1, grad_out.cols(), grad_out.column_sums())?;
                let grad_in = grad_out.matmul_nt(weight)?;
                Ok((
                    PredictorGrads::Linear {
                        weight: grad_w,
                        bias: grad_b,
                    },
                    grad_in,
                ))
            }
            Predictor::TwoLayer { w1, w2, .. } => {
                let pre = ctx
                    .hidden_pre
                    .as_ref()
                    .ok_or_else(|| Error::State("missing hidden activation".into()))?;
                let mut hidden = pre.clone();
                for v in hidden.values_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let grad_w2 = hidden.matmul_tn(grad_out)?;
                let grad_b2 =
                    DenseMatrix::from_vec(1, grad_out.cols(), grad_out.column_sums())?;
                let mut grad_pre = grad_out.matmul_nt(w2)?;
                for (g, &p) in grad_pre.values_mut().iter_mut().zip(pre.values()) {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                }
                let grad_w1 = ctx.input.matmul_tn(&grad_pre)?;
                let grad_b1 =
                    DenseMatrix::from_vec(1, grad_pre.cols(), grad_pre.column_sums())?;
                let grad_in = grad_pre.matmul_nt(w1)?;
                Ok((
                    PredictorGrads::TwoLayer {
                        w1: grad_w1,
                        b1: grad_b1,
                        w2: grad_w2,
                        b2: grad_b2,
                    },
                    grad_in,
                ))
            }
        }
    }

    pub fn adam_states(&self, lr: f64) -> PredictorAdam {
        match self {
            Predictor::Linear { weight, bias } => PredictorAdam::Linear {
                weight: AdamState::new(weight.rows(), weight.cols(), lr),
                bias: AdamState::new(bias.rows(), bias.cols(), lr),
            },
            Predictor::TwoLayer { w1, b1, w2, b2 } => PredictorAdam::TwoLayer {
                w1: AdamState::new(w1.rows(), w1.cols(), lr),
                b1: AdamState::new(b1.rows(), b1.cols(), lr),
                w2: AdamState::new(w2.rows(), w2.cols(), lr),
                b2: AdamState::new(b2.rows(), b2.cols(), lr),
            },
        }
    }

    pub fn adam_update(
        &mut self,
        grads: &PredictorGrads,
        adam: &mut PredictorAdam,
    ) -> Result<()> {
        match (self, grads, adam) {
            (
                Predictor::Linear { weight, bias },
                PredictorGrads::Linear {
                    weight: gw,
                    bias: gb,
                },
                PredictorAdam::Linear {
                    weight: sw,
                    bias: sb,
                },
            ) => {
                adam_step(weight, gw, sw)?;
                adam_step(bias, gb, sb)
            }
            (
                Predictor::TwoLayer { w1, b1, w2, b2 },
                PredictorGrads::TwoLayer {
                    w1: g1,
                    b1: gb1,
                    w2: g2,
                    b2: gb2,
                },
                PredictorAdam::TwoLayer {
                    w1: s1,
                    b1: sb1,
                    w2: s2,
                    b2: sb2,
                },
            ) => {
                adam_step(w1, g1, s1)?;
                adam_step(b1, gb1, sb1)?;
                adam_step(w2, g2, s2)?;
                adam_step(b2, gb2, sb2)
            }
            _ => Err(Error::State(
                "predictor, gradients, and optimizer state disagree on the variant".into(),
            )),
        }
    }
}

impl PredictorGrads {
    /// Elementwise sum, for combining the user-side and item-side passes.
    pub fn add(&mut self, other: &PredictorGrads) -> Result<()> {
        match (self, other) {
            (
                PredictorGrads::Linear { weight, bias },
                PredictorGrads::Linear {
                    weight: ow,
                    bias: ob,
                },
            ) => {
                weight.add_scaled(ow, 1.0)?;
                bias.add_scaled(ob, 1.0)
            }
            (
                PredictorGrads::TwoLayer { w1, b1, w2, b2 },
                PredictorGrads::TwoLayer {
                    w1: o1,
                    b1: ob1,
                    w2: o2,
                    b2: ob2,
                },
            ) => {
                w1.add_scaled(o1, 1.0)?;
                b1.add_scaled(ob1, 1.0)?;
                w2.add_scaled(o2, 1.0)?;
                b2.add_scaled(ob2, 1.0)
            }
            _ => Err(Error::State("mismatched predictor gradient variants".into())),
        }
    }
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
    fn identity_predictor_passes_through() {
        let p = Predictor::identity(3);
        let e = random(4, 3, 1);
        assert_eq!(p.forward(&e).unwrap(), e);
    }

    #[test]
    fn one_hot_row_reads_weight_row() {
        let p = Predictor::linear(3, 5).unwrap();
        let e = DenseMatrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let out = p.forward(&e).unwrap();
        if let Predictor::Linear { weight, .. } = &p {
            assert_eq!(out.row(0), weight.row(1));
        } else {
            unreachable!()
        }
    }

    #[test]
    fn matches_reference_multiply() {
        let p = Predictor::linear(4, 9).unwrap();
        let e = random(6, 4, 2);
        let out = p.forward(&e).unwrap();
        if let Predictor::Linear { weight, bias } = &p {
            let reference = e.matmul(weight).unwrap();
            for r in 0..6 {
                for c in 0..4 {
                    let expect = reference.get(r, c) + bias.get(0, c);
                    assert!((out.get(r, c) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(Predictor::linear(64, 0).unwrap().param_count(), 64 * 64 + 64);
        assert_eq!(
            Predictor::two_layer(8, 0).unwrap().param_count(),
            2 * (8 * 8 + 8)
        );
    }

    fn check_gradients(p: &Predictor, seed: u64) {
        let e = random(5, p.d(), seed);
        let probe = random(5, p.d(), seed + 100);
        // scalar loss: ⟨probe, h(E)⟩
        let (out, ctx) = p.forward_ctx(&e).unwrap();
        let (param_grads, grad_in) = p.backward(&ctx, &probe).unwrap();
        let _ = out;

        // input gradient
        let fd_in = finite_diff_grad(
            |x| Ok(p.forward(x).unwrap().dot(&probe).unwrap()),
            &e,
            1e-6,
        )
        .unwrap();
        assert!(max_rel_err(&grad_in, &fd_in) < 1e-6);

        // parameter gradients, table by table
        let tables: Vec<(DenseMatrix, DenseMatrix)> = match (p.clone(), &param_grads) {
            (Predictor::Linear { weight, bias }, PredictorGrads::Linear { weight: gw, bias: gb }) => {
                vec![(weight, gw.clone()), (bias, gb.clone())]
            }
            (
                Predictor::TwoLayer { w1, b1, w2, b2 },
                PredictorGrads::TwoLayer { w1: g1, b1: gb1, w2: g2, b2: gb2 },
            ) => vec![
                (w1, g1.clone()),
                (b1, gb1.clone()),
                (w2, g2.clone()),
                (b2, gb2.clone()),
            ],
            _ => unreachable!(),
        };
        for (idx, (table, analytic)) in tables.iter().enumerate() {
            let rebuild = |t: &DenseMatrix| -> Predictor {
                let mut q = p.clone();
                match (&mut q, idx) {
                    (Predictor::Linear { weight, .. }, 0) => *weight = t.clone(),
                    (Predictor::Linear { bias, .. }, 1) => *bias = t.clone(),
                    (Predictor::TwoLayer { w1, .. }, 0) => *w1 = t.clone(),
                    (Predictor::TwoLayer { b1, .. }, 1) => *b1 = t.clone(),
                    (Predictor::TwoLayer { w2, .. }, 2) => *w2 = t.clone(),
                    (Predictor::TwoLayer { b2, .. }, 3) => *b2 = t.clone(),
                    _ => unreachable!(),
                }
                q
            };
            let fd = finite_diff_grad(
                |t| Ok(rebuild(t).forward(&e).unwrap().dot(&probe).unwrap()),
                table,
                1e-6,
            )
            .unwrap();
            assert!(
                max_rel_err(analytic, &fd) < 1e-6,
                "table {idx}: {}",
                max_rel_err(analytic, &fd)
            );
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        check_gradients(&Predictor::linear(4, 21).unwrap(), 31);
    }

    #[test]
    fn two_layer_gradients_match_finite_differences() {
        check_gradients(&Predictor::two_layer(4, 22).unwrap(), 32);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = Predictor::linear(3, 0).unwrap();
        assert!(p.forward(&DenseMatrix::zeros(2, 4)).is_err());
    }
}
