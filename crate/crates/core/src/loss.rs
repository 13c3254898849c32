//! Contrastive, KL and reconstruction terms and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::model::{decode, encode, gaussian_heads, project, BoundBundle};
use crate::tensor::{Element, Tape, Tensor, TensorError, Var};

/// Logit added to each anchor's self-similarity so it drops out of the softmax.
const SELF_MASK: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.01,
            lambda3: 0.1,
            lambda4: 0.1,
            tau: 0.5,
        }
    }
}

impl LossWeights {
    /// All λ zero: plain NT-Xent.
    pub fn contrastive_only(tau: f64) -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            tau,
        }
    }

    pub fn lambdas(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(TensorError::InvalidArgument(format!(
                "temperature must be > 0, got {}",
                self.tau
            )));
        }
        for (i, l) in self.lambdas().iter().enumerate() {
            if !(*l >= 0.0 && l.is_finite()) {
                return Err(TensorError::InvalidArgument(format!(
                    "lambda{} must be a finite value >= 0, got {l}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub l_cl: f64,
    pub l_kl_1: f64,
    pub l_kl_2: f64,
    pub l_re_1: f64,
    pub l_re_2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cl: f64,
    pub l_kl_1: f64,
    pub l_kl_2: f64,
    pub l_re_1: f64,
    pub l_re_2: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn parts(&self) -> LossParts {
        LossParts {
            l_cl: self.l_cl,
            l_kl_1: self.l_kl_1,
            l_kl_2: self.l_kl_2,
            l_re_1: self.l_re_1,
            l_re_2: self.l_re_2,
        }
    }

    /// `(name, value)` of every field, total last.
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("l_cl", self.l_cl),
            ("l_kl_1", self.l_kl_1),
            ("l_kl_2", self.l_kl_2),
            ("l_re_1", self.l_re_1),
            ("l_re_2", self.l_re_2),
            ("l_total", self.l_total),
        ]
    }
}

/// `l_cl + λ1 l_kl_1 + λ2 l_kl_2 + λ3 l_re_1 + λ4 l_re_2`, summed left to right.
pub fn superinfo_total(parts: LossParts, w: &LossWeights) -> LossBreakdown {
    let l_total = parts.l_cl
        + w.lambda1 * parts.l_kl_1
        + w.lambda2 * parts.l_kl_2
        + w.lambda3 * parts.l_re_1
        + w.lambda4 * parts.l_re_2;
    LossBreakdown {
        l_cl: parts.l_cl,
        l_kl_1: parts.l_kl_1,
        l_kl_2: parts.l_kl_2,
        l_re_1: parts.l_re_1,
        l_re_2: parts.l_re_2,
        l_total,
    }
}

fn same_shape<T: Element>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    op: &'static str,
) -> Result<(usize, usize), TensorError> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb || sa.len() != 2 {
        return Err(TensorError::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    Ok((sa[0], sa[1]))
}

/// NT-Xent over the `2N` embeddings `[z1; z2]`: every anchor is classified
/// against the other `2N - 1` rows by cosine similarity over `tau`, with its
/// partner view as the positive. Averaged over anchors.
pub fn nt_xent<T: Element>(tape: &mut Tape<T>, z1: Var, z2: Var, tau: f64) -> Result<Var, TensorError> {
    let (n, _) = same_shape(tape, z1, z2, "nt_xent")?;
    if n < 2 {
        return Err(TensorError::InvalidArgument(format!(
            "nt_xent needs at least 2 pairs, got {n}"
        )));
    }
    if !(tau > 0.0) {
        return Err(TensorError::InvalidArgument(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    let m = 2 * n;
    let z = tape.concat_rows(&[z1, z2])?;
    let zn = tape.l2_normalize_rows(z)?;
    let znt = tape.transpose(zn)?;
    let sim = tape.matmul(zn, znt)?;
    let logits = tape.scale(sim, 1.0 / tau)?;

    let mut mask = vec![0.0; m * m];
    let mut positive = vec![0.0; m * m];
    for i in 0..m {
        mask[i * m + i] = SELF_MASK;
        positive[i * m + (i + n) % m] = 1.0;
    }
    let mask = tape.constant(Tensor::from_f64(vec![m, m], &mask)?);
    let positive = tape.constant(Tensor::from_f64(vec![m, m], &positive)?);
    let masked = tape.add(logits, mask)?;
    let log_p = tape.log_softmax_rows(masked)?;
    let picked = tape.mul(log_p, positive)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / m as f64)
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over dimensions and averaged
/// over the batch. An empty batch gives 0.
pub fn gaussian_kl<T: Element>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var, TensorError> {
    let (b, h) = same_shape(tape, mu, logvar, "gaussian_kl")?;
    let var = tape.exp(logvar)?;
    let mu2 = tape.square(mu)?;
    let ones = tape.constant(Tensor::full(vec![b, h], T::one()));
    let t = tape.sub(logvar, var)?;
    let t = tape.add(t, ones)?;
    let t = tape.sub(t, mu2)?;
    let s = tape.sum(t)?;
    let factor = if b == 0 { 0.0 } else { -0.5 / b as f64 };
    tape.scale(s, factor)
}

/// Squared L2 distance summed over features, averaged over the batch.
pub fn recon_loss<T: Element>(tape: &mut Tape<T>, v: Var, v_hat: Var) -> Result<Var, TensorError> {
    let (b, _) = same_shape(tape, v, v_hat, "recon_loss")?;
    let d = tape.sub(v_hat, v)?;
    let sq = tape.square(d)?;
    let s = tape.sum(sq)?;
    let factor = if b == 0 { 0.0 } else { 1.0 / b as f64 };
    tape.scale(s, factor)
}

/// Tape handles of every component and of the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_cl: Var,
    pub l_kl_1: Var,
    pub l_kl_2: Var,
    pub l_re_1: Var,
    pub l_re_2: Var,
    pub total: Var,
}

impl LossVars {
    pub fn components(&self) -> [(&'static str, Var); 5] {
        [
            ("l_cl", self.l_cl),
            ("l_kl_1", self.l_kl_1),
            ("l_kl_2", self.l_kl_2),
            ("l_re_1", self.l_re_1),
            ("l_re_2", self.l_re_2),
        ]
    }

    pub fn parts<T: Element>(&self, tape: &Tape<T>) -> Result<LossParts, TensorError> {
        Ok(LossParts {
            l_cl: tape.scalar_value(self.l_cl)?.as_f64(),
            l_kl_1: tape.scalar_value(self.l_kl_1)?.as_f64(),
            l_kl_2: tape.scalar_value(self.l_kl_2)?.as_f64(),
            l_re_1: tape.scalar_value(self.l_re_1)?.as_f64(),
            l_re_2: tape.scalar_value(self.l_re_2)?.as_f64(),
        })
    }
}

/// Builds the full objective for one batch of paired views `x1`, `x2`.
///
/// Each view is encoded to `h`, projected for the contrastive term, passed
/// through the Gaussian heads for its KL term, and decoded to reconstruct the
/// *other* view.
pub fn superinfo_loss<T: Element>(
    tape: &mut Tape<T>,
    bundle: &BoundBundle,
    x1: Var,
    x2: Var,
    w: &LossWeights,
) -> Result<LossVars, TensorError> {
    w.validate()?;
    let h1 = encode(tape, bundle, x1)?;
    let h2 = encode(tape, bundle, x2)?;
    let (mu1, lv1) = gaussian_heads(tape, bundle, h1)?;
    let (mu2, lv2) = gaussian_heads(tape, bundle, h2)?;
    let rec_from_2 = decode(tape, bundle, h2)?;
    let rec_from_1 = decode(tape, bundle, h1)?;
    let z1 = project(tape, bundle, h1)?;
    let z2 = project(tape, bundle, h2)?;

    let l_cl = nt_xent(tape, z1, z2, w.tau)?;
    let l_kl_1 = gaussian_kl(tape, mu1, lv1)?;
    let l_kl_2 = gaussian_kl(tape, mu2, lv2)?;
    let l_re_1 = recon_loss(tape, x1, rec_from_2)?;
    let l_re_2 = recon_loss(tape, x2, rec_from_1)?;

    let mut total = l_cl;
    for (lambda, term) in w.lambdas().into_iter().zip([l_kl_1, l_kl_2, l_re_1, l_re_2]) {
        let weighted = tape.scale(term, lambda)?;
        total = tape.add(total, weighted)?;
    }
    Ok(LossVars {
        l_cl,
        l_kl_1,
        l_kl_2,
        l_re_1,
        l_re_2,
        total,
    })
}

/// The contrastive term alone, with the same forward path as
/// [`superinfo_loss`] but no heads or decoder in the graph.
pub fn contrastive_loss<T: Element>(
    tape: &mut Tape<T>,
    bundle: &BoundBundle,
    x1: Var,
    x2: Var,
    tau: f64,
) -> Result<Var, TensorError> {
    let h1 = encode(tape, bundle, x1)?;
    let h2 = encode(tape, bundle, x2)?;
    let z1 = project(tape, bundle, h1)?;
    let z2 = project(tape, bundle, h2)?;
    nt_xent(tape, z1, z2, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, rng_normal, Rng};
    use proptest::prelude::*;

    fn eval(f: impl FnOnce(&mut Tape<f64>) -> Result<Var, TensorError>) -> f64 {
        let mut t = Tape::new();
        let v = f(&mut t).unwrap();
        t.scalar_value(v).unwrap()
    }

    fn mat(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn nt_xent_identical_embeddings() {
        for n in [2usize, 3, 8, 33] {
            let rows = vec![vec![0.3, -1.2, 2.0]; n];
            let l = eval(|t| {
                let a = t.constant(mat(&rows));
                let b = t.constant(mat(&rows));
                nt_xent(t, a, b, 0.5)
            });
            let expected = ((2 * n - 1) as f64).ln();
            assert!((l - expected).abs() <= 1e-9, "n={n}: {l} vs {expected}");
        }
        assert!((3f64.ln() - 1.098612).abs() < 1e-6);
    }

    #[test]
    fn nt_xent_hand_case() {
        // Positives agree exactly, every negative points the opposite way.
        let e = std::f64::consts::E;
        let expected = -(e.powi(2) / (e.powi(2) + 2.0 * e.powi(-2))).ln();
        assert!((expected - 2f64.mul_add(e.powi(-4), 1.0).ln()).abs() < 1e-15);
        let l = eval(|t| {
            let a = t.constant(mat(&[vec![1.0, 0.0], vec![-1.0, 0.0]]));
            let b = t.constant(mat(&[vec![1.0, 0.0], vec![-1.0, 0.0]]));
            nt_xent(t, a, b, 0.5)
        });
        assert!((l - 0.0359763).abs() <= 1e-6, "{l}");
        assert!((l - expected).abs() <= 1e-12);
    }

    #[test]
    fn nt_xent_rejects_single_pair_and_mismatch() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(mat(&[vec![1.0, 0.0]]));
        assert!(nt_xent(&mut t, a, a, 0.5).is_err());
        let b = t.constant(mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let c = t.constant(mat(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]));
        assert!(matches!(nt_xent(&mut t, b, c, 0.5), Err(TensorError::Shape { .. })));
        assert!(nt_xent(&mut t, b, b, 0.0).is_err());
    }

    #[test]
    fn kl_anchors() {
        let kl = |mu: f64, lv: f64| {
            eval(|t| {
                let m = t.constant(mat(&[vec![mu]]));
                let l = t.constant(mat(&[vec![lv]]));
                gaussian_kl(t, m, l)
            })
        };
        assert_eq!(kl(0.0, 0.0), 0.0);
        assert!((kl(1.0, 0.0) - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((kl(0.0, 1.0) - 0.5 * (e - 2.0)).abs() < 1e-15);
        assert!((0.5 * (e - 2.0) - 0.359141).abs() < 1e-6);
    }

    #[test]
    fn kl_averages_over_batch_and_sums_over_dims() {
        let v = eval(|t| {
            let m = t.constant(mat(&[vec![1.0, 1.0], vec![0.0, 0.0]]));
            let l = t.constant(mat(&[vec![0.0, 0.0], vec![0.0, 0.0]]));
            gaussian_kl(t, m, l)
        });
        assert!((v - 0.5).abs() < 1e-15);
        let empty = eval(|t| {
            let m = t.constant(Tensor::zeros(vec![0, 3]));
            gaussian_kl(t, m, m)
        });
        assert_eq!(empty, 0.0);
    }

    #[test]
    fn recon_anchors_and_gradient() {
        assert_eq!(
            eval(|t| {
                let v = t.constant(mat(&[vec![1.0, 0.0]]));
                let h = t.constant(mat(&[vec![0.0, 0.0]]));
                recon_loss(t, v, h)
            }),
            1.0
        );
        let v = mat(&[vec![0.5, -1.0, 2.0], vec![1.0, 1.0, 0.0]]);
        let vh = mat(&[vec![0.7, -1.5, 2.0], vec![0.0, 3.0, 0.25]]);
        assert_eq!(
            eval(|t| {
                let a = t.constant(v.clone());
                let b = t.constant(v.clone());
                recon_loss(t, a, b)
            }),
            0.0
        );
        let mut t = Tape::new();
        let a = t.constant(v.clone());
        let b = t.param(vh.clone());
        let l = recon_loss(&mut t, a, b).unwrap();
        let g = t.backward(l).unwrap();
        for ((gi, vi), hi) in g.get(b).unwrap().data().iter().zip(v.data()).zip(vh.data()) {
            assert!((gi - (hi - vi)).abs() < 1e-15);
        }
        let report = finite_diff_check(
            |t, p| {
                let a = t.constant(v.clone());
                recon_loss(t, a, p[0])
            },
            &[vh],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");

        let mut t = Tape::<f64>::new();
        let a = t.constant(mat(&[vec![1.0, 0.0]]));
        let b = t.constant(mat(&[vec![1.0, 0.0, 0.0]]));
        assert!(recon_loss(&mut t, a, b).is_err());
    }

    #[test]
    fn total_combination() {
        let parts = LossParts {
            l_cl: 1.0,
            l_kl_1: 2.0,
            l_kl_2: 2.0,
            l_re_1: 3.0,
            l_re_2: 3.0,
        };
        let w = LossWeights::default();
        assert!((superinfo_total(parts, &w).l_total - 1.64).abs() < 1e-12);
        assert_eq!(superinfo_total(parts, &LossWeights::contrastive_only(0.5)).l_total, 1.0);
        let doubled = LossWeights {
            lambda3: 2.0 * w.lambda3,
            ..w
        };
        let gain = superinfo_total(parts, &doubled).l_total - superinfo_total(parts, &w).l_total;
        assert!((gain - parts.l_re_1 * w.lambda3).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { lambda2: -0.1, ..Default::default() }.validate().is_err());
        assert!(LossWeights { lambda4: f64::NAN, ..Default::default() }.validate().is_err());
    }

    fn check_component(pick: fn(&LossVars) -> Var) {
        use crate::model::{ModelBundle, ModelDims};
        let dims = ModelDims::tiny(5);
        let m: ModelBundle<f64> = ModelBundle::init(&mut Rng::seed_from_u64(21), dims.clone()).unwrap();
        let x1: Tensor<f64> = rng_normal(&mut Rng::seed_from_u64(1), vec![4, 5], 0.0, 1.0).unwrap();
        let x2: Tensor<f64> = rng_normal(&mut Rng::seed_from_u64(2), vec![4, 5], 0.0, 1.0).unwrap();
        let params: Vec<Tensor<f64>> = m.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        let report = finite_diff_check(
            |t, vars| {
                let b = dims.bind_vars(vars)?;
                let a = t.constant(x1.clone());
                let c = t.constant(x2.clone());
                let l = superinfo_loss(t, &b, a, c, &LossWeights::default())?;
                Ok(pick(&l))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{report:?}");
        assert!(report.checked > 100);
    }

    #[test]
    fn gradient_check_contrastive() {
        check_component(|l| l.l_cl);
    }

    #[test]
    fn gradient_check_kl() {
        check_component(|l| l.l_kl_1);
        check_component(|l| l.l_kl_2);
    }

    #[test]
    fn gradient_check_reconstruction() {
        check_component(|l| l.l_re_1);
        check_component(|l| l.l_re_2);
    }

    #[test]
    fn gradient_check_total() {
        check_component(|l| l.total);
    }

    #[test]
    fn tape_total_matches_combination() {
        use crate::model::{ModelBundle, ModelDims};
        let m: ModelBundle<f64> = ModelBundle::init(&mut Rng::seed_from_u64(3), ModelDims::tiny(5)).unwrap();
        let mut t = Tape::new();
        let b = m.bind(&mut t, true);
        let x1 = t.constant(rng_normal(&mut Rng::seed_from_u64(1), vec![6, 5], 0.0, 1.0).unwrap());
        let x2 = t.constant(rng_normal(&mut Rng::seed_from_u64(2), vec![6, 5], 0.0, 1.0).unwrap());
        let w = LossWeights::default();
        let l = superinfo_loss(&mut t, &b, x1, x2, &w).unwrap();
        let combined = superinfo_total(l.parts(&t).unwrap(), &w);
        assert!((combined.l_total - t.scalar_value(l.total).unwrap()).abs() <= 1e-12);
        let only = contrastive_loss(&mut t, &b, x1, x2, w.tau).unwrap();
        assert_eq!(t.scalar_value(only).unwrap(), combined.l_cl);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nt_xent_is_nonnegative_and_scale_invariant(
            n in 2usize..6, p in 2usize..5, seed in any::<u64>(), k in 0.1f64..10.0
        ) {
            let z1: Tensor<f64> = rng_normal(&mut Rng::seed_from_u64(seed), vec![n, p], 0.0, 1.0).unwrap();
            let z2: Tensor<f64> = rng_normal(&mut Rng::seed_from_u64(!seed), vec![n, p], 0.0, 1.0).unwrap();
            let scaled = |z: &Tensor<f64>| {
                Tensor::from_f64(z.shape().to_vec(), &z.to_f64_vec().iter().map(|v| v * k).collect::<Vec<_>>()).unwrap()
            };
            let loss = |a: Tensor<f64>, b: Tensor<f64>| eval(|t| {
                let a = t.constant(a);
                let b = t.constant(b);
                nt_xent(t, a, b, 0.5)
            });
            let base = loss(z1.clone(), z2.clone());
            prop_assert!(base >= 0.0);
            let ln_n = (n as f64).ln();
            prop_assert!(ln_n - base <= ln_n);
            let rescaled = loss(scaled(&z1), scaled(&z2));
            prop_assert!((base - rescaled).abs() <= 1e-10 * base.max(1.0));
        }

        #[test]
        fn kl_nonnegative_and_zero_only_at_standard_normal(
            mu in -5.0f64..5.0, lv in -10.0f64..10.0
        ) {
            let v = eval(|t| {
                let m = t.constant(mat(&[vec![mu]]));
                let l = t.constant(mat(&[vec![lv]]));
                gaussian_kl(t, m, l)
            });
            prop_assert!(v >= -1e-9);
            if mu.abs() > 1e-3 || lv.abs() > 1e-3 {
                prop_assert!(v > 1e-9);
            }
        }
    }
}
