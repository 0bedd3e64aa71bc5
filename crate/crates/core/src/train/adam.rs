//! Bias-corrected adaptive moment optimizer with unit-interval
//! projection for the fusion scalars.

use crate::error::{Error, Result};
use crate::params::{GradMap, ParamKind, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, parallel to a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            m: params.iter().map(|e| Tensor::zeros(e.value.shape())).collect(),
            v: params.iter().map(|e| Tensor::zeros(e.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimizer step. Parameters whose gradient is entirely zero are
/// left untouched (state included), so frozen or unreachable parameters
/// never drift. Unit-interval parameters are projected onto [0, 1]
/// afterwards.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &GradMap<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape(format!(
            "adam_step: {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lit(hyper.beta1), T::from_f64_lit(hyper.beta2));
    let one_m_b1 = T::one() - b1;
    let one_m_b2 = T::one() - b2;
    let lr_t = T::from_f64_lit(lr);
    let eps = T::from_f64_lit(hyper.eps);
    let inv_bc1 = T::from_f64_lit(1.0 / bc1);
    let inv_bc2 = T::from_f64_lit(1.0 / bc2);

    for i in 0..params.len() {
        let g = grads.by_index(i);
        if g.shape() != params.entry(i).value.shape() {
            return Err(Error::shape(format!(
                "adam_step: gradient shape {:?} does not match parameter {} {:?}",
                g.shape(),
                params.entry(i).name,
                params.entry(i).value.shape()
            )));
        }
        if g.data().iter().all(|&v| v == T::zero()) {
            continue;
        }
        let mut m = state.m[i].to_vec();
        let mut v = state.v[i].to_vec();
        let mut p = params.entry(i).value.to_vec();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + one_m_b1 * gj;
            v[j] = b2 * v[j] + one_m_b2 * gj * gj;
            let m_hat = m[j] * inv_bc1;
            let v_hat = v[j] * inv_bc2;
            p[j] = p[j] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        if params.entry(i).kind == ParamKind::UnitInterval {
            for pj in &mut p {
                *pj = pj.max(T::zero()).min(T::one());
            }
        }
        let shape = params.entry(i).value.shape().to_vec();
        state.m[i] = Tensor::from_vec(&shape, m).unwrap();
        state.v[i] = Tensor::from_vec(&shape, v).unwrap();
        params.set_by_index(i, Tensor::from_vec(&shape, p).unwrap());
    }
    Ok(())
}

/// Learning rate after `intervals` decay intervals: `lr0 * gamma^k`.
pub fn decayed_lr(lr0: f64, gamma: f64, intervals: usize) -> f64 {
    lr0 * gamma.powi(intervals as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: Vec<f64>) -> ParamSet<f64> {
        let mut set = ParamSet::new();
        let n = value.len();
        set.insert("p", Tensor::from_vec(&[n], value).unwrap(), ParamKind::Dense);
        set
    }

    /// Gradient of sum(p): ones everywhere.
    fn ones_grad(set: &ParamSet<f64>) -> GradMap<f64> {
        let mut tape = crate::autodiff::Tape::<f64>::new();
        let bound = set.bind(&mut tape, true);
        let loss = tape.sum(bound.id(0));
        let g = tape.backward(loss).unwrap();
        GradMap::collect(set, &bound, &g)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut set = single_param(vec![1.0, -2.0, 3.0]);
        let mut state = AdamState::new(&set);
        // seed the state with a non-trivial moment first
        let ones = ones_grad(&set);
        adam_step(&mut set, &ones, &mut state, 0.1, &AdamHyper::default()).unwrap();
        let after_real_step = set.get("p").unwrap().clone();
        // a zero gradient must not move the parameter, despite the state
        let zeros = GradMap::zeros_like(&set);
        adam_step(&mut set, &zeros, &mut state, 0.1, &AdamHyper::default()).unwrap();
        assert_eq!(set.get("p").unwrap().data(), after_real_step.data());
    }

    #[test]
    fn first_step_moves_by_lr() {
        // grad = 1 everywhere, fresh state: bias-corrected ratio is 1, so
        // the update is -lr / (1 + eps) per coordinate
        let mut set = single_param(vec![0.5, 0.5]);
        let mut state = AdamState::new(&set);
        let grads = ones_grad(&set);
        adam_step(&mut set, &grads, &mut state, 0.01, &AdamHyper::default()).unwrap();
        for &v in set.get("p").unwrap().data() {
            assert!((v - (0.5 - 0.01)).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn unit_interval_projection() {
        let mut set = ParamSet::<f64>::new();
        set.insert("alpha", Tensor::scalar(0.0), ParamKind::UnitInterval);
        let mut state = AdamState::new(&set);
        // positive gradient pushes alpha negative; projection clamps to 0
        let mut tape = crate::autodiff::Tape::<f64>::new();
        let bound = set.bind(&mut tape, true);
        let loss = tape.sum(bound.id(0));
        let g = tape.backward(loss).unwrap();
        let grads = GradMap::collect(&set, &bound, &g);
        adam_step(&mut set, &grads, &mut state, 0.1, &AdamHyper::default()).unwrap();
        assert_eq!(set.get("alpha").unwrap().item(), 0.0);
    }

    #[test]
    fn decay_schedule() {
        assert!((decayed_lr(1e-3, 0.97, 0) - 1e-3).abs() < 1e-18);
        assert!((decayed_lr(1e-3, 0.97, 3) - 1e-3 * 0.97f64.powi(3)).abs() < 1e-18);
    }
}
