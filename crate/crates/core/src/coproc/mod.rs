//! Neural co-processor (NCP) trained through a frozen emulator network (EN).
//!
//! The EN learns the map from region-B stimulation (plus the first observed
//! region-A activity as context) to hand position. The NCP maps observed
//! region-A activity to stimulation. NCP training runs the NCP on activity
//! recorded from the real substrate, predicts the resulting behaviour with
//! the EN, and backpropagates the behavioural error through the EN into the
//! NCP. EN gradients are computed and discarded; only NCP weights move.

pub mod dataset;
pub mod emulator;
pub mod eval;
pub mod ncp;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brainsim::BrainConfig;
use crate::checkpoint::{Checkpoint, NamedArray};
use crate::diffnet::{net_backward, net_backward_full, net_forward, Activation, GradSet, NetBuilder, NetParams};
use crate::error::{Error, Result};

pub use dataset::{
    rollout, sample_stim_dataset, EmulatorDataset, EmulatorRecord, PolicyMode, Rollout, Split, StimSamplerSpec,
    REST_BINS,
};
pub use emulator::{emulator_r2, train_emulator, EmulatorHistory, EmulatorTraining};
pub use eval::{
    closed_loop_eval, coadaptation_session, matched_random_amplitude, with_current_pathway, CoadaptReport,
    EvalMetrics,
};
pub use ncp::{ncp_batch_step, train_ncp, NcpExample, NcpHistory, NcpTraining, TaskDistribution};

/// Per-bin stimulation drive on region-B channels, each entry in `[0, s_max]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StimFrameSeq {
    pub frames: Vec<Vec<f64>>,
}

impl StimFrameSeq {
    pub fn validate(&self, channels: usize, s_max: f64) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != channels {
                return Err(Error::dim(format!("stim frame {t}"), channels, f.len()));
            }
            if let Some(c) = f.iter().position(|&s| !(0.0..=s_max).contains(&s)) {
                return Err(Error::InvalidArgument(format!(
                    "stim frame {t} channel {c} = {} outside [0, {s_max}]",
                    f[c]
                )));
            }
        }
        Ok(())
    }

    /// Mean over bins of the squared stimulation norm.
    pub fn mean_energy(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        let total: f64 = self.frames.iter().map(|f| f.iter().map(|s| s * s).sum::<f64>()).sum();
        total / self.frames.len() as f64
    }
}

/// Weights of the behavioural loss
/// `alpha |p_T - z|^2 + beta mean_t |p_t - z|^2 + gamma mean_t |y_t|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    pub terminal_term: f64,
    pub path_term: f64,
    pub stim_energy_term: f64,
}

/// Loss value plus its gradients with respect to the predicted positions and
/// the stimulation frames.
pub fn behavior_loss(
    positions: &[Vec<f64>],
    stim: &[Vec<f64>],
    target: [f64; 2],
    w: &LossWeights,
) -> Result<(LossValue, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = positions.len();
    if n == 0 || stim.len() != n {
        return Err(Error::SequenceLength(format!(
            "{n} predicted positions for {} stimulation frames",
            stim.len()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut lv = LossValue::default();
    let mut dpos = Vec::with_capacity(n);
    for (t, p) in positions.iter().enumerate() {
        let e = [p[0] - target[0], p[1] - target[1]];
        let sq = e[0] * e[0] + e[1] * e[1];
        lv.path_term += w.beta * inv_n * sq;
        let mut scale = 2.0 * w.beta * inv_n;
        if t == n - 1 {
            lv.terminal_term = w.alpha * sq;
            scale += 2.0 * w.alpha;
        }
        dpos.push(vec![scale * e[0], scale * e[1]]);
    }
    let mut dstim = Vec::with_capacity(n);
    for y in stim {
        lv.stim_energy_term += w.gamma * inv_n * y.iter().map(|v| v * v).sum::<f64>();
        dstim.push(y.iter().map(|v| 2.0 * w.gamma * inv_n * v).collect());
    }
    lv.total = lv.terminal_term + lv.path_term + lv.stim_energy_term;
    Ok((lv, dpos, dstim))
}

/// Network shapes and scalings shared by the NCP and EN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoprocConfig {
    pub s_max: f64,
    pub ncp_hidden: usize,
    pub en_hidden: usize,
    /// Extra NCP input channels for external sensors.
    pub sensor_channels: usize,
    /// Initial bias of the NCP output layer (sets the initial stimulation level).
    pub ncp_output_bias: f64,
    /// Make the EN output layer a linear recurrent layer started as an
    /// integrator, so the hidden layer only has to model hand velocity.
    pub en_integrator: bool,
}

impl Default for CoprocConfig {
    fn default() -> Self {
        Self {
            s_max: 5.0,
            ncp_hidden: 32,
            en_hidden: 32,
            sensor_channels: 0,
            ncp_output_bias: -2.0,
            en_integrator: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoprocModel {
    pub ncp: NetParams<f64>,
    pub en: NetParams<f64>,
    /// Digest of `en`, recorded once emulator training completes.
    pub en_digest: Option<String>,
    pub s_max: f64,
    /// Multiplier applied to observed rates before they enter either network.
    pub rate_scale: f64,
}

impl CoprocModel {
    /// Fresh NCP and EN for a substrate with `cfg`'s dimensions.
    pub fn init<R: Rng + ?Sized>(cfg: &BrainConfig, cc: &CoprocConfig, rng: &mut R) -> Result<Self> {
        if !(cc.s_max > 0.0) {
            return Err(Error::InvalidArgument("s_max must be > 0".into()));
        }
        let mut ncp = NetBuilder::new(cfg.n_a + cc.sensor_channels)
            .recurrent("ncp_h", cc.ncp_hidden, Activation::Tanh)
            .dense("ncp_out", cfg.n_b, Activation::BoundedSigmoid { scale: cc.s_max })
            .build(rng)?;
        for b in &mut ncp.layers.last_mut().expect("two layers").bias {
            *b = cc.ncp_output_bias;
        }
        let hidden = NetBuilder::new(cfg.n_b + cfg.n_a).recurrent("en_h", cc.en_hidden, Activation::Tanh);
        let mut en = if cc.en_integrator {
            hidden.recurrent("en_out", 2, Activation::Identity)
        } else {
            hidden.dense("en_out", 2, Activation::Identity)
        }
        .build(rng)?;
        if cc.en_integrator {
            let out = &mut en.layers[1];
            out.weights = out.weights.scale(cfg.dt_ms / 1000.0);
            out.recurrent_weights = Some(crate::linalg::Matrix::identity(2));
        }
        Ok(Self {
            ncp,
            en,
            en_digest: None,
            s_max: cc.s_max,
            rate_scale: 1.0 / cfg.rate_max,
        })
    }

    pub fn stim_channels(&self) -> usize {
        self.ncp.output_dim()
    }

    /// Marks the current EN as trained and frozen.
    pub fn freeze_emulator(&mut self) {
        self.en_digest = Some(self.en.digest());
    }

    /// Errors unless the EN still matches its recorded digest.
    pub fn check_frozen(&self) -> Result<String> {
        let now = self.en.digest();
        match &self.en_digest {
            Some(d) if *d == now => Ok(now),
            Some(d) => Err(Error::FrozenEmulator {
                before: d.clone(),
                after: now,
            }),
            None => Err(Error::InvalidArgument(
                "emulator has not been trained (no digest recorded)".into(),
            )),
        }
    }

    pub fn scale_rates(&self, rates: &[f64]) -> Vec<f64> {
        rates.iter().map(|r| r * self.rate_scale).collect()
    }

    /// EN input for one bin: scaled stimulation followed by scaled context.
    pub fn en_input(&self, stim: &[f64], context_scaled: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = stim.iter().map(|s| s / self.s_max).collect();
        v.extend_from_slice(context_scaled);
        v
    }

    /// Predicted hand positions for a stimulation sequence.
    pub fn emulate(&self, stim: &[Vec<f64>], context: &[f64]) -> Result<Vec<Vec<f64>>> {
        let ctx = self.scale_rates(context);
        let inputs: Vec<Vec<f64>> = stim.iter().map(|s| self.en_input(s, &ctx)).collect();
        Ok(net_forward(&self.en, &inputs, None)?.0)
    }

    /// Behavioural loss of the NCP on recorded inputs, evaluated through the
    /// EN, and its gradient with respect to the NCP parameters only.
    ///
    /// `ncp_inputs` are already scaled; `context` is raw observed rates.
    pub fn ncp_objective(
        &self,
        ncp: &NetParams<f64>,
        ncp_inputs: &[Vec<f64>],
        context: &[f64],
        target: [f64; 2],
        weights: &LossWeights,
    ) -> Result<(LossValue, GradSet<f64>)> {
        let (stim, _) = net_forward(ncp, ncp_inputs, None)?;
        let ctx = self.scale_rates(context);
        let en_inputs: Vec<Vec<f64>> = stim.iter().map(|s| self.en_input(s, &ctx)).collect();
        let (pos, _) = net_forward(&self.en, &en_inputs, None)?;
        let (lv, dpos, dstim) = behavior_loss(&pos, &stim, target, weights)?;
        if !lv.total.is_finite() {
            return Err(Error::NonFinite("NCP behavioural loss".into()));
        }
        // Through the EN; its parameter gradients are dropped on the floor.
        let through_en = net_backward_full(&self.en, &en_inputs, None, &dpos)?;
        let n_b = stim.first().map_or(0, Vec::len);
        let dy: Vec<Vec<f64>> = through_en
            .input_grads
            .iter()
            .zip(&dstim)
            .map(|(g, e)| {
                g[..n_b]
                    .iter()
                    .zip(e)
                    .map(|(gi, ei)| gi / self.s_max + ei)
                    .collect()
            })
            .collect();
        let grads = net_backward(ncp, ncp_inputs, None, &dy)?;
        Ok((lv, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<f64> {
        let mut ck = Checkpoint::new();
        for a in self.ncp.to_arrays("ncp.") {
            ck.push(a);
        }
        for a in self.en.to_arrays("en.") {
            ck.push(a);
        }
        ck.push(NamedArray::scalar("model.s_max", "scale", self.s_max));
        ck.push(NamedArray::scalar("model.rate_scale", "scale", self.rate_scale));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint<f64>) -> Result<Self> {
        let mut m = Self {
            ncp: NetParams::from_checkpoint(ck, "ncp.")?,
            en: NetParams::from_checkpoint(ck, "en.")?,
            en_digest: None,
            s_max: ck.require("model.s_max")?.values[0],
            rate_scale: ck.require("model.rate_scale")?.values[0],
        };
        m.freeze_emulator();
        Ok(m)
    }
}
