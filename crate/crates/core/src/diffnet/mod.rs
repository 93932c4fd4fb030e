//! Minimal differentiable network engine.
//!
//! Networks are ordered stacks of dense and Elman-style recurrent layers.
//! Gradients are computed by explicit reverse-mode accumulation through
//! time (see [`propagate`]); [`gradcheck`] verifies them against central
//! differences and [`optim`] applies SGD/Adam updates.
//!
//! Every operation takes its inputs by reference and returns fresh values.

pub mod gradcheck;
pub mod optim;
pub mod propagate;

use rand::Rng;

use crate::checkpoint::{Checkpoint, NamedArray};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub use gradcheck::{grad_check, max_relative_error, numeric_gradient, LossSpec};
pub use optim::{opt_step, OptMethod, OptState};
pub use propagate::{net_backward, net_backward_full, net_forward, net_value_and_grad, Backward};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation<T> {
    Tanh,
    Relu,
    Identity,
    /// `scale * sigmoid(z)`, output in `[0, scale]`.
    BoundedSigmoid { scale: T },
}

impl<T: Scalar> Activation<T> {
    #[inline]
    pub fn apply(&self, z: T) -> T {
        match *self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
            Activation::BoundedSigmoid { scale } => scale / (T::one() + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    pub fn derivative(&self, z: T, y: T) -> T {
        match *self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
            Activation::BoundedSigmoid { scale } => y * (T::one() - y / scale),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::BoundedSigmoid { .. } => "bounded_sigmoid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Recurrent,
}

impl LayerKind {
    fn tag(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Recurrent => "recurrent",
        }
    }
}

/// One layer: `y_t = act(W x_t + U y_{t-1} + b)`, with the `U` term only
/// for recurrent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind,
    /// Shape `(out, in)`.
    pub weights: Matrix<T>,
    /// Shape `(out, out)`; present exactly for recurrent layers.
    pub recurrent_weights: Option<Matrix<T>>,
    pub bias: Vec<T>,
    pub activation: Activation<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_slice().len()
            + self.recurrent_weights.as_ref().map_or(0, |u| u.as_slice().len())
            + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer hidden state; empty vectors for dense layers.
pub type NetState<T> = Vec<Vec<T>>;

impl<T: Scalar> NetParams<T> {
    /// Validates the layer chain and wraps it.
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn empty() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            let ctx = |what: &str| format!("layer `{}` {what}", l.name);
            if l.bias.len() != l.out_dim() {
                return Err(Error::dim(ctx("bias"), l.out_dim(), l.bias.len()));
            }
            match (l.kind, &l.recurrent_weights) {
                (LayerKind::Dense, None) => {}
                (LayerKind::Recurrent, Some(u)) => {
                    if u.shape() != (l.out_dim(), l.out_dim()) {
                        return Err(Error::dim(ctx("recurrent weights"), l.out_dim(), u.rows()));
                    }
                }
                (LayerKind::Dense, Some(_)) => {
                    return Err(Error::InvalidArgument(ctx("is dense but has recurrent weights")))
                }
                (LayerKind::Recurrent, None) => {
                    return Err(Error::InvalidArgument(ctx("is recurrent without recurrent weights")))
                }
            }
            if k > 0 {
                let prev = &self.layers[k - 1];
                if prev.out_dim() != l.in_dim() {
                    return Err(Error::dim(ctx("input"), prev.out_dim(), l.in_dim()));
                }
            }
            if let Activation::BoundedSigmoid { scale } = l.activation {
                if !(scale > T::zero()) {
                    return Err(Error::InvalidArgument(ctx("bounded sigmoid scale must be > 0")));
                }
            }
            if !self.flat_layer(l).iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(ctx("parameters")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn zero_state(&self) -> NetState<T> {
        self.layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Dense => Vec::new(),
                LayerKind::Recurrent => vec![T::zero(); l.out_dim()],
            })
            .collect()
    }

    fn flat_layer(&self, l: &Layer<T>) -> Vec<T> {
        let mut v = l.weights.as_slice().to_vec();
        if let Some(u) = &l.recurrent_weights {
            v.extend_from_slice(u.as_slice());
        }
        v.extend_from_slice(&l.bias);
        v
    }

    /// Parameters in canonical order: per layer `W`, then `U`, then `b`.
    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| self.flat_layer(l)).collect()
    }

    /// Same architecture with parameters taken from `flat`.
    pub fn with_flat(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::dim("with_flat", self.param_count(), flat.len()));
        }
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for l in &mut out.layers {
            for w in l.weights.as_mut_slice() {
                *w = it.next().unwrap();
            }
            if let Some(u) = &mut l.recurrent_weights {
                for w in u.as_mut_slice() {
                    *w = it.next().unwrap();
                }
            }
            for b in &mut l.bias {
                *b = it.next().unwrap();
            }
        }
        Ok(out)
    }

    /// Human-readable name of the flat parameter at `index`.
    pub fn param_name(&self, mut index: usize) -> String {
        for l in &self.layers {
            let nw = l.weights.as_slice().len();
            if index < nw {
                return format!("{}.w[{},{}]", l.name, index / l.in_dim(), index % l.in_dim());
            }
            index -= nw;
            if let Some(u) = &l.recurrent_weights {
                let nu = u.as_slice().len();
                if index < nu {
                    return format!("{}.u[{},{}]", l.name, index / l.out_dim(), index % l.out_dim());
                }
                index -= nu;
            }
            if index < l.bias.len() {
                return format!("{}.b[{index}]", l.name);
            }
            index -= l.bias.len();
        }
        format!("<out of range {index}>")
    }

    /// Serialises into checkpoint arrays whose names start with `prefix`.
    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            let base = format!("{prefix}{}", l.name);
            out.push(NamedArray::matrix(
                format!("{base}.w"),
                format!("{}:{}", l.kind.tag(), l.activation.tag()),
                &l.weights,
            ));
            if let Some(u) = &l.recurrent_weights {
                out.push(NamedArray::matrix(format!("{base}.u"), "recurrent", u));
            }
            out.push(NamedArray::vector(format!("{base}.b"), "bias", &l.bias));
            if let Activation::BoundedSigmoid { scale } = l.activation {
                out.push(NamedArray::scalar(format!("{base}.scale"), "scale", scale));
            }
        }
        out
    }

    /// Inverse of [`NetParams::to_arrays`].
    pub fn from_checkpoint(ck: &Checkpoint<T>, prefix: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for a in &ck.arrays {
            let Some(rest) = a.name.strip_prefix(prefix) else {
                continue;
            };
            let Some(lname) = rest.strip_suffix(".w") else {
                continue;
            };
            let bad = |reason: String| Error::MalformedCheckpoint { line: 0, reason };
            let (kind_tag, act_tag) = a
                .kind
                .split_once(':')
                .ok_or_else(|| bad(format!("layer kind `{}`", a.kind)))?;
            let kind = match kind_tag {
                "dense" => LayerKind::Dense,
                "recurrent" => LayerKind::Recurrent,
                other => return Err(bad(format!("unknown layer kind `{other}`"))),
            };
            let base = format!("{prefix}{lname}");
            let activation = match act_tag {
                "tanh" => Activation::Tanh,
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                "bounded_sigmoid" => Activation::BoundedSigmoid {
                    scale: ck.require(&format!("{base}.scale"))?.values[0],
                },
                other => return Err(bad(format!("unknown activation `{other}`"))),
            };
            let recurrent_weights = match kind {
                LayerKind::Dense => None,
                LayerKind::Recurrent => Some(ck.require(&format!("{base}.u"))?.to_matrix()),
            };
            layers.push(Layer {
                name: lname.to_string(),
                kind,
                weights: a.to_matrix(),
                recurrent_weights,
                bias: ck.require(&format!("{base}.b"))?.values.clone(),
                activation,
            });
        }
        Self::new(layers)
    }

    /// Content hash over the serialised parameters.
    pub fn digest(&self) -> String {
        let mut ck = Checkpoint::new();
        for a in self.to_arrays("") {
            ck.push(a);
        }
        ck.digest().expect("validated network serialises")
    }
}

/// Gradients with the same layout as the network they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet<T> {
    pub layers: Vec<LayerGrad<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub name: String,
    pub weights: Matrix<T>,
    pub recurrent_weights: Option<Matrix<T>>,
    pub bias: Vec<T>,
}

impl<T: Scalar> GradSet<T> {
    pub fn zeros_for(params: &NetParams<T>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    name: l.name.clone(),
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    recurrent_weights: l
                        .recurrent_weights
                        .as_ref()
                        .map(|u| Matrix::zeros(u.rows(), u.cols())),
                    bias: vec![T::zero(); l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(l.weights.as_slice());
            if let Some(u) = &l.recurrent_weights {
                v.extend_from_slice(u.as_slice());
            }
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.as_slice().len()
                    + l.recurrent_weights.as_ref().map_or(0, |u| u.as_slice().len())
                    + l.bias.len()
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> T {
        self.flatten().iter().map(|&g| g * g).sum::<T>().sqrt()
    }

    pub fn is_congruent(&self, params: &NetParams<T>) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, l)| {
                g.weights.shape() == l.weights.shape()
                    && g.bias.len() == l.bias.len()
                    && g.recurrent_weights.as_ref().map(Matrix::shape)
                        == l.recurrent_weights.as_ref().map(Matrix::shape)
            })
    }

    /// Adds `other` in place.
    pub fn accumulate(&mut self, other: &GradSet<T>) -> Result<()> {
        if self.len() != other.len() || self.layers.len() != other.layers.len() {
            return Err(Error::dim("gradient accumulation", self.len(), other.len()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights = a.weights.add(&b.weights)?;
            match (&mut a.recurrent_weights, &b.recurrent_weights) {
                (Some(x), Some(y)) => *x = x.add(y)?,
                (None, None) => {}
                _ => return Err(Error::InvalidArgument(format!("layer `{}` kinds differ", a.name))),
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weights = l.weights.scale(s);
            if let Some(u) = &mut l.recurrent_weights {
                *u = u.scale(s);
            }
            for b in &mut l.bias {
                *b *= s;
            }
        }
        out
    }
}

/// Builds networks layer by layer with uniform `±1/sqrt(fan_in)` weights and
/// zero biases.
#[derive(Debug, Clone)]
pub struct NetBuilder<T> {
    input_dim: usize,
    specs: Vec<(String, LayerKind, usize, Activation<T>)>,
}

impl<T: Scalar> NetBuilder<T> {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            specs: Vec::new(),
        }
    }

    pub fn dense(mut self, name: &str, out: usize, act: Activation<T>) -> Self {
        self.specs.push((name.to_string(), LayerKind::Dense, out, act));
        self
    }

    pub fn recurrent(mut self, name: &str, out: usize, act: Activation<T>) -> Self {
        self.specs
            .push((name.to_string(), LayerKind::Recurrent, out, act));
        self
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NetParams<T>> {
        let mut layers = Vec::with_capacity(self.specs.len());
        let mut in_dim = self.input_dim;
        for (name, kind, out, act) in &self.specs {
            let fan_in = match kind {
                LayerKind::Dense => in_dim,
                LayerKind::Recurrent => in_dim + out,
            };
            let limit = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut draw = |r: usize, c: usize| {
                Matrix::from_fn(r, c, |_, _| T::lit(rng.random_range(-limit..=limit)))
            };
            let weights = draw(*out, in_dim);
            let recurrent_weights = match kind {
                LayerKind::Dense => None,
                LayerKind::Recurrent => Some(draw(*out, *out)),
            };
            layers.push(Layer {
                name: name.clone(),
                kind: *kind,
                weights,
                recurrent_weights,
                bias: vec![T::zero(); *out],
                activation: *act,
            });
            in_dim = *out;
        }
        NetParams::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net() -> NetParams<f64> {
        NetBuilder::new(3)
            .recurrent("h", 4, Activation::Tanh)
            .dense("out", 2, Activation::BoundedSigmoid { scale: 5.0 })
            .build(&mut ChaCha8Rng::seed_from_u64(7))
            .unwrap()
    }

    #[test]
    fn builder_respects_init_bounds() {
        let net = small_net();
        let lim_h = 1.0 / (7.0f64).sqrt();
        assert!(net.layers[0].weights.max_abs() <= lim_h);
        assert!(net.layers[1].weights.max_abs() <= 0.5);
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(net.param_count(), 4 * 3 + 16 + 4 + 2 * 4 + 2);
    }

    #[test]
    fn flatten_round_trip() {
        let net = small_net();
        let flat = net.flatten();
        assert_eq!(net.with_flat(&flat).unwrap(), net);
        assert_eq!(net.param_name(12), "h.u[0,0]");
        assert_eq!(net.param_name(flat.len() - 1), "out.b[1]");
    }

    #[test]
    fn checkpoint_round_trip_preserves_digest() {
        let net = small_net();
        let mut ck = Checkpoint::new();
        for a in net.to_arrays("ncp.") {
            ck.push(a);
        }
        let back = Checkpoint::<f64>::parse(&ck.to_text().unwrap()).unwrap();
        let restored = NetParams::from_checkpoint(&back, "ncp.").unwrap();
        assert_eq!(restored, net);
        assert_eq!(restored.digest(), net.digest());
    }

    #[test]
    fn inconsistent_chain_names_the_layer() {
        let mut net = small_net();
        net.layers[1].weights = Matrix::zeros(2, 5);
        let err = net.validate().unwrap_err().to_string();
        assert!(err.contains("`out`"), "{err}");
    }

    #[test]
    fn bounded_sigmoid_stays_in_range() {
        let act = Activation::BoundedSigmoid { scale: 5.0 };
        for z in [-1000.0, -3.0, 0.0, 3.0, 1000.0] {
            let y = act.apply(z);
            assert!((0.0..=5.0).contains(&y));
        }
        assert_eq!(act.apply(-1000.0), 0.0);
    }
}
