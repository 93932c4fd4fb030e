//! Emulator training: stimulation plus context → hand trajectory.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{EmulatorDataset, EmulatorRecord, Split};
use super::CoprocModel;
use crate::diffnet::optim::clip_grad_norm;
use crate::diffnet::{net_forward, net_value_and_grad, opt_step, GradSet, OptMethod, OptState};
use crate::error::{Error, Result};
use crate::seeds::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Seed of the minibatch order.
    pub seed: u64,
}

impl EmulatorTraining {
    /// Adam with `learning_rate`, sized for `model`'s EN.
    pub fn optimizer(&self, model: &CoprocModel) -> OptState<f64> {
        OptState::new(OptMethod::adam(), self.learning_rate, &model.en)
    }
}

impl Default for EmulatorTraining {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            learning_rate: 3e-3,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

/// Row `k` holds the losses after `k` epochs; row 0 is the untrained EN.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmulatorHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

fn inputs_of(model: &CoprocModel, rec: &EmulatorRecord) -> Vec<Vec<f64>> {
    let ctx = model.scale_rates(&rec.context);
    rec.stim.frames.iter().map(|s| model.en_input(s, &ctx)).collect()
}

/// Mean over bins of the squared position error, and its per-step gradient.
fn trajectory_mse(pred: &[Vec<f64>], rec: &EmulatorRecord) -> (f64, Vec<Vec<f64>>) {
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grads = pred
        .iter()
        .zip(&rec.behavior.points)
        .map(|(p, q)| {
            let e = [p[0] - q.hand_pos[0], p[1] - q.hand_pos[1]];
            loss += (e[0] * e[0] + e[1] * e[1]) / n;
            vec![2.0 * e[0] / n, 2.0 * e[1] / n]
        })
        .collect();
    (loss, grads)
}

fn mean_loss<'a>(model: &CoprocModel, recs: impl Iterator<Item = &'a EmulatorRecord>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in recs {
        let (pred, _) = net_forward(&model.en, &inputs_of(model, r), None)?;
        total += trajectory_mse(&pred, r).0;
        n += 1;
    }
    Ok(if n == 0 { f64::NAN } else { total / n as f64 })
}

/// Fraction of held-out position variance explained by the EN:
/// `1 - SSE / SST`, with SST taken around the per-coordinate mean of all
/// validation positions.
pub fn emulator_r2(model: &CoprocModel, dataset: &EmulatorDataset) -> Result<f64> {
    let recs: Vec<&EmulatorRecord> = dataset.split(Split::Validation).collect();
    if recs.is_empty() {
        return Err(Error::InvalidArgument("dataset has no validation records".into()));
    }
    let mut mean = [0.0; 2];
    let mut count = 0.0;
    for r in &recs {
        for p in &r.behavior.points {
            mean[0] += p.hand_pos[0];
            mean[1] += p.hand_pos[1];
            count += 1.0;
        }
    }
    mean = [mean[0] / count, mean[1] / count];
    let (mut sse, mut sst) = (0.0, 0.0);
    for r in &recs {
        let (pred, _) = net_forward(&model.en, &inputs_of(model, r), None)?;
        for (p, q) in pred.iter().zip(&r.behavior.points) {
            sse += (p[0] - q.hand_pos[0]).powi(2) + (p[1] - q.hand_pos[1]).powi(2);
            sst += (q.hand_pos[0] - mean[0]).powi(2) + (q.hand_pos[1] - mean[1]).powi(2);
        }
    }
    Ok(1.0 - sse / sst)
}

/// Minibatch training of `model.en` on the train split with the optimizer
/// in `opt`. Returns the model with its EN trained and frozen (digest
/// recorded) and the per-epoch loss history.
pub fn train_emulator(
    model: &CoprocModel,
    dataset: &EmulatorDataset,
    opt: &OptState<f64>,
    settings: &EmulatorTraining,
) -> Result<(CoprocModel, EmulatorHistory)> {
    let train: Vec<&EmulatorRecord> = dataset.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::InvalidArgument("emulator dataset has no training records".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    dataset.validate(model.en.input_dim() - model.stim_channels(), model.stim_channels(), model.s_max)?;
    let mut m = model.clone();
    let mut opt = opt.clone();
    let mut hist = EmulatorHistory::default();
    hist.train_loss.push(mean_loss(&m, train.iter().copied())?);
    hist.validation_loss.push(mean_loss(&m, dataset.split(Split::Validation))?);

    let has_validation = dataset.split(Split::Validation).next().is_some();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = rng_for(settings.seed, "emulator-minibatch");
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(settings.batch_size) {
            let mut acc = GradSet::zeros_for(&m.en);
            for &i in batch {
                let rec = train[i];
                let (loss, _, back) = net_value_and_grad(&m.en, &inputs_of(&m, rec), None, |pred| {
                    Ok(trajectory_mse(pred, rec))
                })?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("emulator training loss at epoch {epoch}")));
                }
                epoch_loss += loss;
                acc.accumulate(&back.grads)?;
            }
            let g = clip_grad_norm(&acc.scaled(1.0 / batch.len() as f64), settings.clip_norm);
            let (en, next) = opt_step(&m.en, &g, &opt)?;
            m.en = en;
            opt = next;
        }
        let val = mean_loss(&m, dataset.split(Split::Validation))?;
        let tr = epoch_loss / train.len() as f64;
        if !tr.is_finite() || (has_validation && !val.is_finite()) {
            return Err(Error::NonFinite(format!("emulator loss at epoch {epoch}")));
        }
        hist.train_loss.push(tr);
        hist.validation_loss.push(val);
    }
    m.freeze_emulator();
    Ok((m, hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brainsim::BrainConfig;
    use crate::coproc::dataset::{sample_stim_dataset, StimSamplerSpec};
    use crate::coproc::CoprocConfig;

    fn setup(n: usize, bins: usize) -> (CoprocModel, EmulatorDataset) {
        let cfg = BrainConfig::desk_scale();
        let cc = CoprocConfig {
            en_hidden: 8,
            ncp_hidden: 4,
            ..CoprocConfig::default()
        };
        let m = CoprocModel::init(&cfg, &cc, &mut rng_for(3, "init")).unwrap();
        let ds = sample_stim_dataset(&cfg, 3, n, bins, &StimSamplerSpec::default()).unwrap();
        (m, ds)
    }

    #[test]
    fn zero_epochs_leave_emulator_unchanged() {
        let (m, ds) = setup(6, 10);
        let opt = OptState::new(OptMethod::adam(), 1e-2, &m.en);
        let settings = EmulatorTraining {
            epochs: 0,
            ..EmulatorTraining::default()
        };
        let (out, hist) = train_emulator(&m, &ds, &opt, &settings).unwrap();
        assert_eq!(out.en, m.en);
        assert_eq!(out.en_digest.as_deref(), Some(m.en.digest().as_str()));
        assert_eq!(hist.train_loss.len(), 1);
    }

    #[test]
    fn training_reduces_loss() {
        let (m, ds) = setup(30, 15);
        let opt = OptState::new(OptMethod::adam(), 1e-2, &m.en);
        let settings = EmulatorTraining {
            epochs: 8,
            batch_size: 8,
            ..EmulatorTraining::default()
        };
        let (_, hist) = train_emulator(&m, &ds, &opt, &settings).unwrap();
        assert!(hist.train_loss.last().unwrap() < &hist.train_loss[0], "{hist:?}");
    }
}
