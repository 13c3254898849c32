use crate::tensor::{Element, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidArgument(format!(
                "invalid Adam settings: lr {} beta1 {} beta2 {} eps {}",
                self.lr, self.beta1, self.beta2, self.eps
            )))
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape().to_vec()), Tensor::zeros(p.shape().to_vec())))
            .unzip();
        Self { m, v, step: 0 }
    }
}

/// Applies one bias-corrected Adam update at step `state.step + 1`.
///
/// `trainable[i] == false` leaves parameter `i` and its moments untouched.
/// Arithmetic runs in f64 and is rounded to `T` on store.
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    trainable: &[bool],
    state: &mut AdamState<T>,
    hp: &AdamParams,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != trainable.len() {
        return Err(TensorError::InvalidArgument(format!(
            "adam: {} params, {} grads, {} moment slots, {} flags",
            params.len(),
            grads.len(),
            state.m.len(),
            trainable.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !trainable[i] {
            continue;
        }
        let g = grads[i];
        if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
            return Err(TensorError::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let gj = gj.as_f64();
            let m_new = hp.beta1 * mj.as_f64() + (1.0 - hp.beta1) * gj;
            let v_new = hp.beta2 * vj.as_f64() + (1.0 - hp.beta2) * gj * gj;
            *mj = T::cast_from(m_new);
            *vj = T::cast_from(v_new);
            let m_hat = m_new / c1;
            let v_hat = v_new / c2;
            *pj = T::cast_from(pj.as_f64() - hp.lr * m_hat / (v_hat.sqrt() + hp.eps));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_f64(vec![1], &[v]).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = scalar(1.5);
        let mut state = AdamState {
            m: vec![scalar(0.2)],
            v: vec![scalar(0.04)],
            step: 3,
        };
        let g = scalar(0.0);
        let hp = AdamParams { lr: 0.0 + 1e-3, ..Default::default() };
        let before = p.clone();
        adam_step(&mut [&mut p], &[&g], &[true], &mut state, &hp).unwrap();
        assert!((state.m[0].data()[0] - 0.18).abs() < 1e-15);
        assert!((state.v[0].data()[0] - 0.04 * 0.999).abs() < 1e-15);
        // With nonzero momentum the parameter still moves; with zero moments it must not.
        let mut fresh = AdamState::zeros_like([&before]);
        let mut q = before.clone();
        adam_step(&mut [&mut q], &[&g], &[true], &mut fresh, &hp).unwrap();
        assert_eq!(q, before);
        assert_eq!(fresh.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let hp = AdamParams::default();
        let mut p = scalar(0.0);
        let mut state = AdamState::zeros_like([&p]);
        adam_step(&mut [&mut p], &[&scalar(1.0)], &[true], &mut state, &hp).unwrap();
        // m_hat = 1, v_hat = 1: delta = -lr / (1 + eps).
        let expected = -3e-4 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn update_magnitude_is_bounded() {
        let hp = AdamParams { lr: 1e-2, ..Default::default() };
        let mut rng = crate::tensor::Rng::seed_from_u64(4);
        let mut p = scalar(0.0);
        let mut state = AdamState::zeros_like([&p]);
        let bound = hp.lr / (1.0 - hp.beta1);
        for _ in 0..2000 {
            let g = scalar(rng.uniform(-5.0, 5.0));
            let before = p.data()[0];
            adam_step(&mut [&mut p], &[&g], &[true], &mut state, &hp).unwrap();
            assert!((p.data()[0] - before).abs() <= bound);
        }
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let hp = AdamParams::default();
        let (mut a, mut b) = (scalar(1.0), scalar(1.0));
        let mut state = AdamState::zeros_like([&a, &b]);
        let g = scalar(2.0);
        adam_step(&mut [&mut a, &mut b], &[&g, &g], &[true, false], &mut state, &hp).unwrap();
        assert_ne!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 1.0);
        assert_eq!(state.m[1].data()[0], 0.0);
    }

    #[test]
    fn misaligned_inputs_error() {
        let hp = AdamParams::default();
        let mut a = scalar(1.0);
        let mut state = AdamState::zeros_like([&a]);
        let g = Tensor::<f64>::zeros(vec![2]);
        assert!(adam_step(&mut [&mut a], &[&g], &[true], &mut state, &hp).is_err());
        assert!(adam_step(&mut [&mut a], &[], &[true], &mut state, &hp).is_err());
    }
}
