use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Hyperparameters and per-parameter slots of one optimizer.
///
/// Adam slots are created lazily on the first step, one pair of moment
/// buffers per parameter, in the order the parameters are passed.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken so far.
    pub t: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> Self {
        Self::with_kind(OptimizerKind::Sgd, lr)
    }

    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn adam(lr: f64) -> Self {
        Self::with_kind(OptimizerKind::Adam, lr)
    }

    fn with_kind(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerState {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one update of whichever kind this state holds.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(self, params, grads),
            OptimizerKind::Adam => adam_step(self, params, grads),
        }
    }
}

fn check_shapes(params: &[&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "parameter {i} has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    Ok(())
}

/// `p <- p - lr * g` for every entry.
pub fn sgd_step(state: &mut OptimizerState, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= state.lr * gv;
        }
    }
    state.t += 1;
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step(state: &mut OptimizerState, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if state.kind != OptimizerKind::Adam {
        return Err(Error::Contract("adam_step on a non-adam optimizer state".into()));
    }
    check_shapes(params, grads)?;
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.second_moment = state.first_moment.clone();
    }
    if state.first_moment.len() != params.len()
        || state
            .first_moment
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.len() != p.numel())
    {
        return Err(Error::Contract("adam slots do not match the parameter list".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for (((pv, gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor {
        Tensor::vector(vec![v])
    }

    #[test]
    fn sgd_examples() {
        let mut s = OptimizerState::sgd(0.1);
        let mut p = one(1.0);
        s.step(&mut [&mut p], &[one(0.5)]).unwrap();
        assert_eq!(p.data(), &[0.95]);
        s.step(&mut [&mut p], &[one(0.0)]).unwrap();
        assert_eq!(p.data(), &[0.95]);

        let mut s = OptimizerState::sgd(1e-4);
        let mut p = one(0.0);
        s.step(&mut [&mut p], &[one(1.0)]).unwrap();
        assert_eq!(p.data(), &[-1e-4]);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut s = OptimizerState::sgd(0.1);
        let mut p = one(1.0);
        let err = s.step(&mut [&mut p], &[Tensor::zeros(vec![2])]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut s = OptimizerState::adam(1e-4);
        let mut p = one(0.0);
        s.step(&mut [&mut p], &[one(2.0)]).unwrap();
        let expected = -1e-4 * (2.0 / (2.0 + 1e-8));
        assert!((p.data()[0] - expected).abs() < 1e-18);
        assert!((p.data()[0] + 9.99999995e-5).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut s = OptimizerState::adam(1e-3);
        let mut p = one(0.7);
        for _ in 0..5 {
            s.step(&mut [&mut p], &[one(0.0)]).unwrap();
            assert_eq!(p.data(), &[0.7]);
        }
        assert_eq!(s.t, 5);
    }

    #[test]
    fn adam_descends_a_parabola() {
        // f(x) = x², gradient 2x, from x = 1 with lr = 0.1.
        let mut s = OptimizerState::adam(0.1);
        let mut x = one(1.0);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = one(2.0 * x.data()[0]);
            s.step(&mut [&mut x], &[g]).unwrap();
            assert!(x.data()[0].abs() < prev.abs());
            prev = x.data()[0];
        }
        // Reference trajectory computed independently in scalar arithmetic.
        assert!((x.data()[0] - 0.07624915560691221).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_changed_parameter_list() {
        let mut s = OptimizerState::adam(1e-3);
        let mut p = one(0.0);
        s.step(&mut [&mut p], &[one(1.0)]).unwrap();
        let mut q = Tensor::zeros(vec![3]);
        assert!(s.step(&mut [&mut q], &[Tensor::zeros(vec![3])]).is_err());
    }
}
