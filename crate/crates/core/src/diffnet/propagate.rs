//! Forward evaluation and backpropagation through time.

use super::{GradSet, LayerKind, NetParams, NetState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Activations recorded for one layer at one time step.
#[derive(Debug, Clone)]
struct StepRecord<T> {
    input: Vec<T>,
    prev_hidden: Vec<T>,
    pre: Vec<T>,
    out: Vec<T>,
}

fn check_state<T: Scalar>(params: &NetParams<T>, state: &NetState<T>) -> Result<()> {
    if state.len() != params.layers.len() {
        return Err(Error::dim("initial state layers", params.layers.len(), state.len()));
    }
    for (l, s) in params.layers.iter().zip(state) {
        let expected = match l.kind {
            LayerKind::Dense => 0,
            LayerKind::Recurrent => l.out_dim(),
        };
        if s.len() != expected {
            return Err(Error::dim(format!("state of layer `{}`", l.name), expected, s.len()));
        }
    }
    Ok(())
}

fn forward_trace<T: Scalar>(
    params: &NetParams<T>,
    inputs: &[Vec<T>],
    initial_state: Option<&NetState<T>>,
) -> Result<(Vec<Vec<StepRecord<T>>>, NetState<T>)> {
    let mut state = match initial_state {
        Some(s) => {
            check_state(params, s)?;
            s.clone()
        }
        None => params.zero_state(),
    };
    let mut trace = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut records = Vec::with_capacity(params.layers.len());
        let mut h = x.clone();
        for (k, l) in params.layers.iter().enumerate() {
            if h.len() != l.in_dim() {
                return Err(Error::dim(format!("input of layer `{}`", l.name), l.in_dim(), h.len()));
            }
            let mut pre = l.weights.matvec(&h)?;
            if let Some(u) = &l.recurrent_weights {
                for (p, r) in pre.iter_mut().zip(u.matvec(&state[k])?) {
                    *p += r;
                }
            }
            for (p, &b) in pre.iter_mut().zip(&l.bias) {
                *p += b;
            }
            let out: Vec<T> = pre.iter().map(|&z| l.activation.apply(z)).collect();
            let prev_hidden = if l.kind == LayerKind::Recurrent {
                std::mem::replace(&mut state[k], out.clone())
            } else {
                Vec::new()
            };
            records.push(StepRecord {
                input: std::mem::replace(&mut h, out.clone()),
                prev_hidden,
                pre,
                out,
            });
        }
        trace.push(records);
    }
    Ok((trace, state))
}

/// Runs the network over a sequence, threading recurrent state.
///
/// Returns one output per input step and the final state. With no steps the
/// final state equals the initial state (zeros when none is given).
pub fn net_forward<T: Scalar>(
    params: &NetParams<T>,
    inputs: &[Vec<T>],
    initial_state: Option<&NetState<T>>,
) -> Result<(Vec<Vec<T>>, NetState<T>)> {
    let (trace, state) = forward_trace(params, inputs, initial_state)?;
    let outputs = trace
        .into_iter()
        .map(|mut step| step.pop().map(|r| r.out).unwrap_or_default())
        .collect();
    Ok((outputs, state))
}

/// Parameter gradients plus gradients with respect to the inputs and the
/// initial state.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub grads: GradSet<T>,
    pub input_grads: Vec<Vec<T>>,
    pub initial_state_grads: NetState<T>,
}

/// Gradient of `sum_t <loss_grad[t], output[t]>` with respect to every
/// parameter.
pub fn net_backward<T: Scalar>(
    params: &NetParams<T>,
    inputs: &[Vec<T>],
    initial_state: Option<&NetState<T>>,
    loss_grad_per_step: &[Vec<T>],
) -> Result<GradSet<T>> {
    Ok(net_backward_full(params, inputs, initial_state, loss_grad_per_step)?.grads)
}

pub fn net_backward_full<T: Scalar>(
    params: &NetParams<T>,
    inputs: &[Vec<T>],
    initial_state: Option<&NetState<T>>,
    loss_grad_per_step: &[Vec<T>],
) -> Result<Backward<T>> {
    if loss_grad_per_step.len() != inputs.len() {
        return Err(Error::SequenceLength(format!(
            "{} loss gradients for {} forward steps",
            loss_grad_per_step.len(),
            inputs.len()
        )));
    }
    let (trace, _) = forward_trace(params, inputs, initial_state)?;
    backward_from_trace(params, &trace, loss_grad_per_step)
}

/// One forward pass, a loss computed from its outputs, and the matching
/// backward pass. `loss` returns a value plus the gradient per output step.
pub fn net_value_and_grad<T, L, F>(
    params: &NetParams<T>,
    inputs: &[Vec<T>],
    initial_state: Option<&NetState<T>>,
    loss: F,
) -> Result<(L, Vec<Vec<T>>, Backward<T>)>
where
    T: Scalar,
    F: FnOnce(&[Vec<T>]) -> Result<(L, Vec<Vec<T>>)>,
{
    let (trace, _) = forward_trace(params, inputs, initial_state)?;
    let outputs: Vec<Vec<T>> = trace
        .iter()
        .map(|step| step.last().map(|r| r.out.clone()).unwrap_or_default())
        .collect();
    let (value, lg) = loss(&outputs)?;
    if lg.len() != inputs.len() {
        return Err(Error::SequenceLength(format!(
            "{} loss gradients for {} forward steps",
            lg.len(),
            inputs.len()
        )));
    }
    let back = backward_from_trace(params, &trace, &lg)?;
    Ok((value, outputs, back))
}

fn add_outer<T: Scalar>(m: &mut crate::linalg::Matrix<T>, a: &[T], b: &[T]) {
    let cols = m.cols();
    for (row, &ai) in m.as_mut_slice().chunks_mut(cols).zip(a) {
        if ai == T::zero() {
            continue;
        }
        for (x, &bj) in row.iter_mut().zip(b) {
            *x += ai * bj;
        }
    }
}

fn backward_from_trace<T: Scalar>(
    params: &NetParams<T>,
    trace: &[Vec<StepRecord<T>>],
    loss_grad_per_step: &[Vec<T>],
) -> Result<Backward<T>> {
    let mut grads = GradSet::zeros_for(params);
    let mut carry = params.zero_state();
    let mut input_grads = vec![Vec::new(); trace.len()];

    for (t, step) in trace.iter().enumerate().rev() {
        let mut upstream = loss_grad_per_step[t].clone();
        if upstream.len() != params.output_dim() {
            return Err(Error::dim(
                format!("loss gradient at step {t}"),
                params.output_dim(),
                upstream.len(),
            ));
        }
        for (k, l) in params.layers.iter().enumerate().rev() {
            let rec = &step[k];
            if l.kind == LayerKind::Recurrent {
                for (u, &c) in upstream.iter_mut().zip(&carry[k]) {
                    *u += c;
                }
            }
            let dpre: Vec<T> = upstream
                .iter()
                .zip(rec.pre.iter().zip(&rec.out))
                .map(|(&g, (&z, &y))| g * l.activation.derivative(z, y))
                .collect();
            let g = &mut grads.layers[k];
            add_outer(&mut g.weights, &dpre, &rec.input);
            for (b, &d) in g.bias.iter_mut().zip(&dpre) {
                *b += d;
            }
            if let (Some(gu), Some(u)) = (&mut g.recurrent_weights, &l.recurrent_weights) {
                add_outer(gu, &dpre, &rec.prev_hidden);
                carry[k] = u.tr_matvec(&dpre)?;
            }
            upstream = l.weights.tr_matvec(&dpre)?;
        }
        input_grads[t] = upstream;
    }

    Ok(Backward {
        grads,
        input_grads,
        initial_state_grads: carry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Activation, Layer, NetBuilder};
    use crate::linalg::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(name: &str, w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation<f64>) -> Layer<f64> {
        Layer {
            name: name.into(),
            kind: LayerKind::Dense,
            weights: Matrix::from_rows(&w).unwrap(),
            recurrent_weights: None,
            bias: b,
            activation: act,
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = NetParams::new(vec![dense(
            "id",
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        )])
        .unwrap();
        let (out, _) = net_forward(&net, &[vec![0.3, -7.0]], None).unwrap();
        assert_eq!(out, vec![vec![0.3, -7.0]]);
    }

    #[test]
    fn empty_sequence_returns_initial_state() {
        let net = NetBuilder::new(2)
            .recurrent("h", 3, Activation::Tanh)
            .build(&mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let init = vec![vec![0.1, 0.2, 0.3]];
        let (out, fin) = net_forward(&net, &[], Some(&init)).unwrap();
        assert!(out.is_empty());
        assert_eq!(fin, init);
    }

    #[test]
    fn two_layer_hand_evaluation() {
        // layer 1: relu([[1,2],[3,-4]] x + [0.5,-1]) at x=(1,0) -> relu(1.5, 2) = (1.5, 2)
        // layer 2: tanh([[0.5,-0.25],[1,1]] h + [0, -3]) -> tanh(0.25, 0.5)
        let net = NetParams::new(vec![
            dense(
                "l1",
                vec![vec![1.0, 2.0], vec![3.0, -4.0]],
                vec![0.5, -1.0],
                Activation::Relu,
            ),
            dense(
                "l2",
                vec![vec![0.5, -0.25], vec![1.0, 1.0]],
                vec![0.0, -3.0],
                Activation::Tanh,
            ),
        ])
        .unwrap();
        let (out, _) = net_forward(&net, &[vec![1.0, 0.0]], None).unwrap();
        assert!((out[0][0] - 0.25f64.tanh()).abs() < 1e-15);
        assert!((out[0][1] - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn input_dimension_error_names_layer() {
        let net = NetBuilder::<f64>::new(2)
            .dense("first", 2, Activation::Tanh)
            .build(&mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let err = net_forward(&net, &[vec![1.0; 3]], None).unwrap_err();
        assert!(err.to_string().contains("`first`"));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let net = NetBuilder::new(2)
            .recurrent("h", 3, Activation::Tanh)
            .dense("o", 2, Activation::Identity)
            .build(&mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let xs = vec![vec![1.0, -1.0]; 4];
        let g = net_backward(&net, &xs, None, &vec![vec![0.0; 2]; 4]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_quadratic_closed_form() {
        // L = |Wx - t|^2, dL/dW = 2 (Wx - t) x^T
        let w = vec![vec![0.5, -1.0, 2.0], vec![0.25, 0.0, -0.5]];
        let net = NetParams::new(vec![dense("lin", w.clone(), vec![0.0, 0.0], Activation::Identity)])
            .unwrap();
        let x = vec![1.0, 2.0, -1.0];
        let t = vec![0.3, -0.2];
        let (out, _) = net_forward(&net, std::slice::from_ref(&x), None).unwrap();
        let resid: Vec<f64> = out[0].iter().zip(&t).map(|(o, t)| o - t).collect();
        let lg: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
        let g = net_backward(&net, std::slice::from_ref(&x), None, &[lg]).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let expected = 2.0 * resid[i] * x[j];
                assert!((g.layers[0].weights[(i, j)] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sequence_length_mismatch_is_error() {
        let net = NetBuilder::<f64>::new(1)
            .dense("o", 1, Activation::Identity)
            .build(&mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let err = net_backward(&net, &[vec![1.0], vec![2.0]], None, &[vec![1.0]]);
        assert!(matches!(err, Err(Error::SequenceLength(_))));
    }
}
