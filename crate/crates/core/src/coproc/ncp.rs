//! Co-processor training through the frozen emulator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{rollout, PolicyMode, REST_BINS};
use super::{CoprocModel, LossValue, LossWeights};
use crate::brainsim::{distance, BrainConfig, BrainState, PlasticityParams, TaskSpec};
use crate::diffnet::optim::clip_grad_norm;
use crate::diffnet::{opt_step, GradSet, OptMethod, OptState};
use crate::error::{Error, Result};
use crate::seeds::rng_for;

/// Training targets: `tasks_per_session` targets per session at evenly
/// spaced angles with a random common rotation, radius uniform in
/// `[radius_min, radius_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskDistribution {
    pub radius_min: f64,
    pub radius_max: f64,
    pub duration_ms: f64,
    pub success_radius: f64,
    pub tasks_per_session: usize,
}

impl Default for TaskDistribution {
    fn default() -> Self {
        Self {
            radius_min: 1.0,
            radius_max: 1.0,
            duration_ms: 1000.0,
            success_radius: 0.2,
            tasks_per_session: 8,
        }
    }
}

impl TaskDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<TaskSpec> {
        let n = self.tasks_per_session;
        let turn: f64 = rng.random();
        (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * (k as f64 + turn) / n as f64;
                let r = if self.radius_max > self.radius_min {
                    rng.random_range(self.radius_min..=self.radius_max)
                } else {
                    self.radius_min
                };
                TaskSpec {
                    target_pos: [r * a.cos(), r * a.sin()],
                    duration_ms: self.duration_ms,
                    success_radius: self.success_radius,
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks_per_session == 0 || !(self.radius_min >= 0.0) || !(self.radius_max >= self.radius_min) {
            return Err(Error::InvalidArgument(format!("invalid task distribution: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcpTraining {
    pub sessions: usize,
    /// Optimizer steps taken on each session's rollouts.
    pub steps_per_session: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub loss: LossWeights,
    /// Seed of the training brain's noise and of task sampling.
    pub seed: u64,
}

impl Default for NcpTraining {
    fn default() -> Self {
        Self {
            sessions: 300,
            steps_per_session: 1,
            learning_rate: 3e-3,
            clip_norm: 1.0,
            loss: LossWeights::default(),
            seed: 0,
        }
    }
}

impl NcpTraining {
    pub fn optimizer(&self, model: &CoprocModel) -> OptState<f64> {
        OptState::new(OptMethod::adam(), self.learning_rate, &model.ncp)
    }
}

/// One training trial as seen by the NCP objective.
#[derive(Debug, Clone, PartialEq)]
pub struct NcpExample {
    /// Scaled NCP inputs per bin.
    pub inputs: Vec<Vec<f64>>,
    /// Raw observed rates used as emulator context.
    pub context: Vec<f64>,
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NcpHistory {
    /// Mean emulator-predicted loss per session, before that session's update.
    pub predicted_loss: Vec<LossValue>,
    /// Mean terminal distance actually reached on the brain per session.
    pub terminal_distance: Vec<f64>,
}

/// Averages the NCP objective over `examples` and takes one optimizer step
/// on the NCP. The EN is read, never written.
pub fn ncp_batch_step(
    model: &CoprocModel,
    examples: &[NcpExample],
    weights: &LossWeights,
    opt: &OptState<f64>,
    clip_norm: f64,
) -> Result<(CoprocModel, OptState<f64>, LossValue)> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let mut acc = GradSet::zeros_for(&model.ncp);
    let mut mean = LossValue::default();
    let w = 1.0 / examples.len() as f64;
    for ex in examples {
        let (lv, g) = model.ncp_objective(&model.ncp, &ex.inputs, &ex.context, ex.target, weights)?;
        acc.accumulate(&g)?;
        mean.total += w * lv.total;
        mean.terminal_term += w * lv.terminal_term;
        mean.path_term += w * lv.path_term;
        mean.stim_energy_term += w * lv.stim_energy_term;
    }
    let g = clip_grad_norm(&acc.scaled(w), clip_norm);
    let (ncp, next) = opt_step(&model.ncp, &g, opt)?;
    let mut m = model.clone();
    m.ncp = ncp;
    Ok((m, next, mean))
}

/// On-policy training: each session rolls the current NCP on the brain over
/// freshly sampled targets, replays the recorded observations through
/// NCP→EN, and updates the NCP only. Fails if the EN digest changes.
pub fn train_ncp(
    model: &CoprocModel,
    cfg: &BrainConfig,
    tasks: &TaskDistribution,
    opt: &OptState<f64>,
    settings: &NcpTraining,
) -> Result<(CoprocModel, NcpHistory)> {
    let before = model.check_frozen()?;
    tasks.validate()?;
    let rest = BrainState::resting(cfg, settings.seed, REST_BINS);
    let mut st = rest.clone();
    let mut task_rng = rng_for(settings.seed, "ncp-tasks");
    let mut unused = rng_for(settings.seed, "unused");
    let mut m = model.clone();
    let mut opt = opt.clone();
    let mut hist = NcpHistory::default();
    for _ in 0..settings.sessions {
        let mut examples = Vec::with_capacity(tasks.tasks_per_session);
        let mut dist = 0.0;
        for task in tasks.sample(&mut task_rng) {
            let ro = rollout(
                cfg,
                &st.restarted_from(&rest),
                &task,
                PolicyMode::Ncp(&m),
                &PlasticityParams::disabled(),
                &mut unused,
            )?;
            dist += distance(ro.trajectory.final_pos().unwrap_or([0.0; 2]), task.target_pos);
            examples.push(NcpExample {
                inputs: ro.inputs.iter().map(|x| m.scale_rates(x)).collect(),
                context: ro.context,
                target: task.target_pos,
            });
            st = ro.end_state;
        }
        hist.terminal_distance.push(dist / examples.len() as f64);
        for k in 0..settings.steps_per_session.max(1) {
            let (next, o, lv) = ncp_batch_step(&m, &examples, &settings.loss, &opt, settings.clip_norm)?;
            if k == 0 {
                hist.predicted_loss.push(lv);
            }
            m = next;
            opt = o;
        }
    }
    let after = m.en.digest();
    if after != before {
        return Err(Error::FrozenEmulator { before, after });
    }
    Ok((m, hist))
}
