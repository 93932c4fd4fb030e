//! Finite-difference verification of backpropagated gradients.

use super::{net_backward, net_forward, GradSet, NetParams, NetState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest network the checker will perturb parameter by parameter.
pub const MAX_CHECK_PARAMS: usize = 5_000;

/// Step of the five-point stencil used by [`grad_check`]. The stencil's
/// truncation error is `O(h^4)`, so a fairly large step keeps round-off
/// small even for gradients many orders below the loss value.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// Scalar loss over a network's output sequence.
#[derive(Debug, Clone)]
pub enum LossSpec<T> {
    /// `sum_t |y_t - target_t|^2`
    SquaredError { targets: Vec<Vec<T>> },
    /// `sum_t <w_t, y_t>`
    Linear { weights: Vec<Vec<T>> },
}

impl<T: Scalar> LossSpec<T> {
    /// Loss value and its gradient with respect to each output step.
    pub fn evaluate(&self, outputs: &[Vec<T>]) -> Result<(T, Vec<Vec<T>>)> {
        let refs = match self {
            LossSpec::SquaredError { targets } => targets,
            LossSpec::Linear { weights } => weights,
        };
        if refs.len() != outputs.len() {
            return Err(Error::SequenceLength(format!(
                "loss has {} steps, network produced {}",
                refs.len(),
                outputs.len()
            )));
        }
        let mut total = T::zero();
        let mut grads = Vec::with_capacity(outputs.len());
        for (y, r) in outputs.iter().zip(refs) {
            if y.len() != r.len() {
                return Err(Error::dim("loss reference", y.len(), r.len()));
            }
            match self {
                LossSpec::SquaredError { .. } => {
                    let d: Vec<T> = y.iter().zip(r).map(|(&a, &b)| a - b).collect();
                    total += d.iter().map(|&v| v * v).sum::<T>();
                    grads.push(d.iter().map(|&v| v + v).collect());
                }
                LossSpec::Linear { .. } => {
                    total += y.iter().zip(r).map(|(&a, &b)| a * b).sum::<T>();
                    grads.push(r.clone());
                }
            }
        }
        Ok((total, grads))
    }
}

/// Five-point central differences of `f` with respect to every parameter:
/// `(8 (f(+h) - f(-h)) - (f(+2h) - f(-2h))) / 12h`.
pub fn numeric_gradient<T, F>(params: &NetParams<T>, f: F, eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&NetParams<T>) -> Result<T>,
{
    let base = params.flatten();
    let mut probe = base.clone();
    let two_eps = eps + eps;
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut at = |offset: T| -> Result<T> {
            probe[i] = base[i] + offset;
            f(&params.with_flat(&probe)?)
        };
        let near = at(eps)? - at(-eps)?;
        let far = at(two_eps)? - at(-two_eps)?;
        probe[i] = base[i];
        let g = (T::lit(8.0) * near - far) / (T::lit(6.0) * two_eps);
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "numeric gradient of {}",
                params.param_name(i)
            )));
        }
        out.push(g);
    }
    Ok(out)
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)`; zero for empty input.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> T {
    let floor = T::lit(REL_FLOOR);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(T::zero(), T::max)
}

/// Compares supplied analytic gradients against central differences of `f`.
pub fn grad_check_with<T, F>(params: &NetParams<T>, analytic: &GradSet<T>, f: F) -> Result<T>
where
    T: Scalar,
    F: Fn(&NetParams<T>) -> Result<T>,
{
    let n = params.param_count();
    if n > MAX_CHECK_PARAMS {
        return Err(Error::TooLarge {
            params: n,
            limit: MAX_CHECK_PARAMS,
        });
    }
    if !analytic.is_congruent(params) {
        return Err(Error::InvalidArgument(
            "analytic gradients are not congruent with the network".into(),
        ));
    }
    let a = analytic.flatten();
    if let Some(i) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "analytic gradient of {}",
            params.param_name(i)
        )));
    }
    let num = numeric_gradient(params, f, T::lit(DEFAULT_EPS))?;
    Ok(max_relative_error(&a, &num))
}

/// Maximum relative error between backpropagated and central-difference
/// gradients of `loss` for the network run over `inputs`.
pub fn grad_check<T: Scalar>(
    params: &NetParams<T>,
    inputs: &[Vec<T>],
    initial_state: Option<&NetState<T>>,
    loss: &LossSpec<T>,
) -> Result<T> {
    let (outputs, _) = net_forward(params, inputs, initial_state)?;
    let (value, loss_grads) = loss.evaluate(&outputs)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss at the unperturbed parameters".into()));
    }
    let analytic = net_backward(params, inputs, initial_state, &loss_grads)?;
    grad_check_with(params, &analytic, |p| {
        let (out, _) = net_forward(p, inputs, initial_state)?;
        Ok(loss.evaluate(&out)?.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Activation, NetBuilder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_setup() -> (NetParams<f64>, Vec<Vec<f64>>, LossSpec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = NetBuilder::new(3)
            .dense("a", 5, Activation::Tanh)
            .dense("b", 4, Activation::Tanh)
            .dense("c", 2, Activation::Identity)
            .build(&mut rng)
            .unwrap();
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets = (0..3)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        (net, xs, LossSpec::SquaredError { targets })
    }

    #[test]
    fn correct_gradients_pass_tightly() {
        let (net, xs, loss) = toy_setup();
        let err = grad_check(&net, &xs, None, &loss).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn ten_percent_corruption_is_detected() {
        let (net, xs, loss) = toy_setup();
        let (out, _) = net_forward(&net, &xs, None).unwrap();
        let (_, lg) = loss.evaluate(&out).unwrap();
        let corrupted = net_backward(&net, &xs, None, &lg).unwrap().scaled(1.1);
        let err = grad_check_with(&net, &corrupted, |p| {
            Ok(loss.evaluate(&net_forward(p, &xs, None)?.0)?.0)
        })
        .unwrap();
        // |1.1a - a| / (1.1|a|) = 1/11 for every parameter with non-negligible gradient
        assert!((0.09..=0.1).contains(&err), "{err}");
    }

    #[test]
    fn empty_network_is_vacuous() {
        let net = NetParams::<f64>::empty();
        let loss = LossSpec::Linear { weights: vec![] };
        assert_eq!(grad_check(&net, &[], None, &loss).unwrap(), 0.0);
    }

    #[test]
    fn oversized_network_is_refused() {
        let net = NetBuilder::<f64>::new(100)
            .dense("big", 60, Activation::Tanh)
            .build(&mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let loss = LossSpec::Linear {
            weights: vec![vec![1.0; 60]],
        };
        let err = grad_check(&net, &[vec![0.0; 100]], None, &loss).unwrap_err();
        assert!(matches!(err, Error::TooLarge { .. }));
    }

    #[test]
    fn non_finite_numeric_gradient_names_parameter() {
        let (net, _, _) = toy_setup();
        let analytic = GradSet::zeros_for(&net);
        let err = grad_check_with(&net, &analytic, |p| {
            Ok(if p.flatten()[0] > net.flatten()[0] {
                f64::INFINITY
            } else {
                0.0
            })
        })
        .unwrap_err();
        assert!(err.to_string().contains("a.w[0,0]"), "{err}");
    }
}
