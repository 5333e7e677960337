//! Adam with bias correction and coupled L2 weight decay.

use crate::ndcore::tensor::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, shapes: &[Vec<usize>]) -> Self {
        AdamState {
            hyper,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }
}

/// One optimizer step over aligned parameter/gradient slices. Weight decay
/// is added to the gradient as `wd·θ` before the moment update.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step over {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for g in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }
    }
    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "param {:?} with grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for ((pj, gj), (mj, vj)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            let grad = gj + weight_decay * *pj;
            *mj = h.beta1 * *mj + (1.0 - h.beta1) * grad;
            *vj = h.beta2 * *vj + (1.0 - h.beta2) * grad * grad;
            let m_hat = *mj / bc1;
            let v_hat = *vj / bc2;
            *pj -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state() -> AdamState {
        AdamState::new(AdamHyper::default(), &[vec![1]])
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut params = vec![Tensor::scalar(0.7)];
        let mut state = scalar_state();
        adam_step(&mut params, &[Tensor::scalar(0.0)], &mut state, 0.0).unwrap();
        assert_eq!(params[0].item(), 0.7);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // At t=1 with grad g: m̂=g, v̂=g², so Δθ = -lr·g/(|g|+ε) ≈ -lr.
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = scalar_state();
        adam_step(&mut params, &[Tensor::scalar(0.5)], &mut state, 0.0).unwrap();
        assert!((params[0].item() + 0.001).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_steps_stay_equal() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = scalar_state();
        adam_step(&mut params, &[Tensor::scalar(0.5)], &mut state, 0.0).unwrap();
        let first = params[0].item();
        adam_step(&mut params, &[Tensor::scalar(0.5)], &mut state, 0.0).unwrap();
        let second = params[0].item() - first;
        assert!((second.abs() - first.abs()).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = scalar_state();
        let err = adam_step(&mut params, &[Tensor::scalar(f64::NAN)], &mut state, 0.0);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = scalar_state();
        adam_step(&mut params, &[Tensor::scalar(0.0)], &mut state, 0.1).unwrap();
        assert!(params[0].item() < 1.0);
    }
}
