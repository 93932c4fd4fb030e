//! Stimulation→behaviour data collection on the simulated brain.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CoprocModel, StimFrameSeq};
use crate::brainsim::{
    preferred_angle, run_trial, BrainConfig, BrainState, PlasticityParams, TaskSpec, Trajectory,
};
use crate::diffnet::{net_forward, NetState};
use crate::error::{Error, Result};
use crate::seeds::rng_for;

pub use crate::brainsim::REST_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorRecord {
    /// Observed region-A rates used as conditioning context.
    pub context: Vec<f64>,
    pub stim: StimFrameSeq,
    pub behavior: Trajectory,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmulatorDataset {
    pub records: Vec<EmulatorRecord>,
}

impl EmulatorDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &EmulatorRecord> {
        self.records.iter().filter(move |r| r.split == which)
    }

    pub fn validate(&self, n_a: usize, n_b: usize, s_max: f64) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.context.len() != n_a {
                return Err(Error::dim(format!("context of record {i}"), n_a, r.context.len()));
            }
            if r.stim.frames.len() != r.behavior.len() {
                return Err(Error::SequenceLength(format!(
                    "record {i}: {} stim frames, {} trajectory points",
                    r.stim.frames.len(),
                    r.behavior.len()
                )));
            }
            r.stim.validate(n_b, s_max)?;
        }
        Ok(())
    }
}

/// Random stimulation patterns: a spatially smooth bump over the channel
/// ring (random heading and sharpness) plus temporally smoothed noise, passed
/// through `s_max * sigmoid`. A fraction of trials instead ramp the
/// amplitude of a random channel subset linearly, and a fraction carry no
/// stimulation at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimSamplerSpec {
    pub s_max: f64,
    /// AR(1) coefficient of the per-channel noise, per bin.
    pub smoothing: f64,
    /// Stationary standard deviation of the noise before the sigmoid.
    pub noise_std: f64,
    /// Range of the pre-sigmoid offset shared by all channels.
    pub base_min: f64,
    pub base_max: f64,
    /// Upper bound of the bump height over the ring.
    pub bump_max: f64,
    pub sweep_fraction: f64,
    pub sweep_channel_prob: f64,
    pub zero_fraction: f64,
    /// Movement targets are drawn uniformly in a disc of this radius.
    pub target_radius: f64,
    pub validation_fraction: f64,
}

impl Default for StimSamplerSpec {
    fn default() -> Self {
        Self {
            s_max: 5.0,
            smoothing: 0.9,
            noise_std: 1.0,
            base_min: -5.0,
            base_max: -1.0,
            bump_max: 6.0,
            sweep_fraction: 0.2,
            sweep_channel_prob: 0.25,
            zero_fraction: 0.05,
            target_radius: 1.2,
            validation_fraction: 0.2,
        }
    }
}

impl StimSamplerSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.s_max > 0.0)
            || !(0.0..1.0).contains(&self.smoothing)
            || !(self.noise_std >= 0.0)
            || !(self.base_min <= self.base_max)
            || !(self.bump_max >= 0.0)
            || !unit(self.sweep_fraction)
            || !unit(self.sweep_channel_prob)
            || !unit(self.zero_fraction)
            || !(self.target_radius >= 0.0)
            || !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5)
        {
            return Err(Error::InvalidArgument(format!("invalid stimulation sampler: {self:?}")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, channels: usize, bins: usize) -> StimFrameSeq {
        let sig = |x: f64| self.s_max / (1.0 + (-x).exp());
        let kind: f64 = rng.random();
        if kind < self.zero_fraction {
            return StimFrameSeq {
                frames: vec![vec![0.0; channels]; bins],
            };
        }
        if kind < self.zero_fraction + self.sweep_fraction {
            let ramps: Vec<Option<(f64, f64)>> = (0..channels)
                .map(|_| {
                    (rng.random::<f64>() < self.sweep_channel_prob)
                        .then(|| (rng.random_range(0.0..=self.s_max), rng.random_range(0.0..=self.s_max)))
                })
                .collect();
            let span = (bins.max(2) - 1) as f64;
            let frames = (0..bins)
                .map(|t| {
                    let u = t as f64 / span;
                    ramps
                        .iter()
                        .map(|r| r.map_or(0.0, |(a, b)| a + (b - a) * u))
                        .collect()
                })
                .collect();
            return StimFrameSeq { frames };
        }
        let base = rng.random_range(self.base_min..=self.base_max);
        let height = rng.random_range(0.0..=self.bump_max);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let offsets: Vec<f64> = (0..channels)
            .map(|c| base + height * (0.5 + 0.5 * (preferred_angle(c, channels) - heading).cos()))
            .collect();
        let innov = self.noise_std * (1.0 - self.smoothing * self.smoothing).sqrt();
        let mut noise: Vec<f64> = (0..channels)
            .map(|_| self.noise_std * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let mut frames = Vec::with_capacity(bins);
        for _ in 0..bins {
            for n in &mut noise {
                *n = self.smoothing * *n + innov * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            frames.push(offsets.iter().zip(&noise).map(|(o, n)| sig(o + n)).collect());
        }
        StimFrameSeq { frames }
    }
}

/// Everything recorded during one trial.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Observation presented to the policy at each bin (raw rates).
    pub inputs: Vec<Vec<f64>>,
    pub stim: StimFrameSeq,
    pub trajectory: Trajectory,
    /// Context handed to the emulator for this trial.
    pub context: Vec<f64>,
    pub end_state: BrainState,
}

/// The emulator context of a trial: the region-A observation available to
/// the policy at its second bin, i.e. after one bin of intent drive. A
/// single-bin trial uses its final observation.
fn context_of(inputs: &[Vec<f64>], end: &BrainState) -> Vec<f64> {
    inputs.get(1).cloned().unwrap_or_else(|| end.observed.clone())
}

/// Stimulation policies used on the brain.
#[derive(Debug, Clone, Copy)]
pub enum PolicyMode<'a> {
    Ncp(&'a CoprocModel),
    ZeroStim,
    /// Independent uniform draws in `[0, amplitude]` per channel and bin.
    RandomStim { amplitude: f64 },
    /// A precomputed sequence, one frame per bin.
    Replay(&'a StimFrameSeq),
}

/// Runs one trial under `mode`. `rng` is only drawn from by random
/// stimulation, so the brain's own noise stream is unaffected by the mode.
pub fn rollout(
    cfg: &BrainConfig,
    state: &BrainState,
    task: &TaskSpec,
    mode: PolicyMode<'_>,
    plasticity: &PlasticityParams,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let mut inputs = Vec::new();
    let mut frames = Vec::new();
    let mut ncp_state: Option<NetState<f64>> = None;
    let (trajectory, end_state) = run_trial(
        cfg,
        state,
        task,
        |k, obs| {
            inputs.push(obs.to_vec());
            let y = match mode {
                PolicyMode::Ncp(m) => {
                    let x = m.scale_rates(obs);
                    let (out, st) = net_forward(&m.ncp, &[x], ncp_state.as_ref())?;
                    ncp_state = Some(st);
                    out.into_iter().next().unwrap_or_default()
                }
                PolicyMode::ZeroStim => vec![0.0; cfg.n_b],
                PolicyMode::RandomStim { amplitude } => {
                    (0..cfg.n_b).map(|_| rng.random_range(0.0..=amplitude)).collect()
                }
                PolicyMode::Replay(seq) => seq.frames.get(k).cloned().ok_or_else(|| {
                    Error::SequenceLength(format!("replayed stimulation has no frame for bin {k}"))
                })?,
            };
            frames.push(y.clone());
            Ok(y)
        },
        plasticity,
    )?;
    let context = context_of(&inputs, &end_state);
    Ok(Rollout {
        inputs,
        stim: StimFrameSeq { frames },
        trajectory,
        context,
        end_state,
    })
}

/// Open-loop stimulation dataset on a brain seeded with `brain_seed`.
///
/// Trials run back to back from the same resting state; the brain's noise
/// stream continues across trials. Plasticity is off.
pub fn sample_stim_dataset(
    cfg: &BrainConfig,
    brain_seed: u64,
    n_trials: usize,
    trial_bins: usize,
    spec: &StimSamplerSpec,
) -> Result<EmulatorDataset> {
    if n_trials == 0 || trial_bins == 0 {
        return Err(Error::InvalidArgument("dataset needs n_trials >= 1 and trial_bins >= 1".into()));
    }
    spec.validate()?;
    cfg.validate()?;
    let rest = BrainState::resting(cfg, brain_seed, REST_BINS);
    let mut rng = rng_for(brain_seed, "stim-sampler");
    let mut unused = rng_for(brain_seed, "unused");
    let n_val = if n_trials >= 2 {
        ((spec.validation_fraction * n_trials as f64).round() as usize).clamp(1, n_trials / 2)
    } else {
        0
    };
    let mut st = rest.clone();
    let mut records = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let r = spec.target_radius * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let task = TaskSpec {
            target_pos: [r * a.cos(), r * a.sin()],
            duration_ms: trial_bins as f64 * cfg.dt_ms,
            success_radius: 1.0,
        };
        let stim = spec.sample(&mut rng, cfg.n_b, trial_bins);
        let ro = rollout(
            cfg,
            &st.restarted_from(&rest),
            &task,
            PolicyMode::Replay(&stim),
            &PlasticityParams::disabled(),
            &mut unused,
        )?;
        st = ro.end_state;
        records.push(EmulatorRecord {
            context: ro.context,
            stim,
            behavior: ro.trajectory,
            split: if i >= n_trials - n_val {
                Split::Validation
            } else {
                Split::Train
            },
        });
    }
    Ok(EmulatorDataset { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EmulatorDataset {
        sample_stim_dataset(&BrainConfig::desk_scale(), 4, 40, 20, &StimSamplerSpec::default()).unwrap()
    }

    #[test]
    fn declared_shape() {
        let ds = sample_stim_dataset(&BrainConfig::desk_scale(), 1, 3, 7, &StimSamplerSpec::default()).unwrap();
        assert_eq!(ds.len(), 3);
        for r in &ds.records {
            assert_eq!(r.stim.frames.len(), 7);
            assert_eq!(r.behavior.len(), 7);
        }
        assert_eq!(ds.split(Split::Validation).count(), 1);
    }

    #[test]
    fn stimulation_bounded_and_varied_on_every_channel() {
        let ds = small();
        ds.validate(16, 16, 5.0).unwrap();
        for c in 0..16 {
            let xs: Vec<f64> = ds
                .records
                .iter()
                .flat_map(|r| r.stim.frames.iter().map(move |f| f[c]))
                .collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
            assert!(var > 0.0, "channel {c}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(small(), small());
        let other =
            sample_stim_dataset(&BrainConfig::desk_scale(), 5, 40, 20, &StimSamplerSpec::default()).unwrap();
        assert_ne!(small(), other);
    }

    #[test]
    fn replayed_rollout_matches_recorded_behaviour() {
        let cfg = BrainConfig::desk_scale();
        let ds = small();
        // second record starts from the brain state left by the first
        let rest = BrainState::resting(&cfg, 4, REST_BINS);
        let mut rng = rng_for(0, "x");
        let task_bins = 20;
        let rec = &ds.records[0];
        // target of the first trial is not stored; zero-stim contrast only needs shape
        let task = TaskSpec {
            target_pos: [0.0, 0.0],
            duration_ms: task_bins as f64 * cfg.dt_ms,
            success_radius: 1.0,
        };
        let ro = rollout(&cfg, &rest, &task, PolicyMode::Replay(&rec.stim), &PlasticityParams::disabled(), &mut rng)
            .unwrap();
        assert_eq!(ro.stim, rec.stim);
        assert_eq!(ro.inputs.len(), task_bins);
        assert_eq!(ro.context, ro.inputs[1]);
    }
}
