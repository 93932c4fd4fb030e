//! First-order optimizers over flattened parameters.

use super::{GradSet, NetParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptMethod<T> {
    /// Heavy-ball momentum; `momentum = 0` is plain gradient descent.
    SgdMomentum { momentum: T },
    Adam { beta1: T, beta2: T, eps: T },
}

impl<T: Scalar> OptMethod<T> {
    pub fn sgd() -> Self {
        OptMethod::SgdMomentum {
            momentum: T::zero(),
        }
    }

    pub fn adam() -> Self {
        OptMethod::Adam {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// Optimizer accumulators. `first` holds velocity (SGD) or the first moment
/// (Adam); `second` is only used by Adam. Both follow the flat parameter
/// order of [`NetParams::flatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub method: OptMethod<T>,
    pub step_size: T,
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub step_count: u64,
}

impl<T: Scalar> OptState<T> {
    pub fn new(method: OptMethod<T>, step_size: T, params: &NetParams<T>) -> Self {
        let n = params.param_count();
        Self {
            method,
            step_size,
            first: vec![T::zero(); n],
            second: match method {
                OptMethod::Adam { .. } => vec![T::zero(); n],
                OptMethod::SgdMomentum { .. } => Vec::new(),
            },
            step_count: 0,
        }
    }
}

/// One update. Inputs are left untouched; the new parameters and state are
/// returned.
pub fn opt_step<T: Scalar>(
    params: &NetParams<T>,
    grads: &GradSet<T>,
    state: &OptState<T>,
) -> Result<(NetParams<T>, OptState<T>)> {
    if !grads.is_congruent(params) {
        return Err(Error::InvalidArgument(
            "gradient shapes do not match the network".into(),
        ));
    }
    let n = params.param_count();
    if state.first.len() != n {
        return Err(Error::dim("optimizer accumulators", n, state.first.len()));
    }
    let mut w = params.flatten();
    let g = grads.flatten();
    let mut next = state.clone();
    next.step_count += 1;
    let lr = state.step_size;
    match state.method {
        OptMethod::SgdMomentum { momentum } => {
            for i in 0..n {
                let v = momentum * state.first[i] + g[i];
                next.first[i] = v;
                w[i] -= lr * v;
            }
        }
        OptMethod::Adam { beta1, beta2, eps } => {
            if state.second.len() != n {
                return Err(Error::dim("adam second moment", n, state.second.len()));
            }
            let t = next.step_count as i32;
            let c1 = T::one() - beta1.powi(t);
            let c2 = T::one() - beta2.powi(t);
            for i in 0..n {
                let m = beta1 * state.first[i] + (T::one() - beta1) * g[i];
                let v = beta2 * state.second[i] + (T::one() - beta2) * g[i] * g[i];
                next.first[i] = m;
                next.second[i] = v;
                w[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
    }
    Ok((params.with_flat(&w)?, next))
}

/// Rescales `grads` so its global norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &GradSet<T>, max_norm: T) -> GradSet<T> {
    let norm = grads.norm();
    if norm > max_norm && norm > T::zero() {
        grads.scaled(max_norm / norm)
    } else {
        grads.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Activation, NetBuilder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> NetParams<f64> {
        NetBuilder::new(2)
            .dense("o", 2, Activation::Identity)
            .build(&mut ChaCha8Rng::seed_from_u64(5))
            .unwrap()
    }

    fn grads_like(net: &NetParams<f64>, vals: &[f64]) -> GradSet<f64> {
        let mut g = GradSet::zeros_for(net);
        g.layers[0].weights.as_mut_slice().copy_from_slice(&vals[..4]);
        g.layers[0].bias.copy_from_slice(&vals[4..]);
        g
    }

    #[test]
    fn sgd_subtracts_scaled_gradient() {
        let p = net();
        let vals = [1.0, -2.0, 0.5, 0.0, 3.0, -0.25];
        let st = OptState::new(OptMethod::sgd(), 0.1, &p);
        let (p2, st2) = opt_step(&p, &grads_like(&p, &vals), &st).unwrap();
        for ((a, b), g) in p2.flatten().iter().zip(p.flatten()).zip(vals) {
            assert_eq!(*a, b - 0.1 * g);
        }
        assert_eq!(st2.step_count, 1);
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn zero_gradient_sgd_leaves_params() {
        let p = net();
        let st = OptState::new(OptMethod::sgd(), 0.1, &p);
        let (p2, _) = opt_step(&p, &GradSet::zeros_for(&p), &st).unwrap();
        assert_eq!(p2, p);
    }

    #[test]
    fn adam_first_step_is_signed_step_size() {
        // t=1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let p = net();
        let vals = [1.0, -2.0, 0.5, 1e-3, 3.0, -0.25];
        let st = OptState::new(OptMethod::adam(), 0.01, &p);
        let (p2, _) = opt_step(&p, &grads_like(&p, &vals), &st).unwrap();
        for ((a, b), g) in p2.flatten().iter().zip(p.flatten()).zip(vals) {
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((a - b - expected).abs() < 1e-15);
            assert!((a - b + 0.01 * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = net();
        let other = NetBuilder::new(3)
            .dense("o", 2, Activation::Identity)
            .build(&mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let st = OptState::new(OptMethod::sgd(), 0.1, &p);
        assert!(opt_step(&p, &GradSet::zeros_for(&other), &st).is_err());
    }
}
