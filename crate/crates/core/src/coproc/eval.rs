//! Closed-loop evaluation on the simulated brain and co-adaptation runs.

use rand_chacha::ChaCha8Rng;

use super::dataset::{rollout, PolicyMode, REST_BINS};
use super::CoprocModel;
use crate::brainsim::{distance, BrainConfig, BrainState, PlasticityParams, TaskSpec};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::seeds::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalMetrics {
    pub mean_terminal_distance: f64,
    pub success_rate: f64,
    /// Mean over all bins of `|stim|^2`.
    pub mean_stim_energy: f64,
    pub trials: usize,
}

#[derive(Default)]
struct Tally {
    dist: f64,
    hits: usize,
    energy: f64,
    bins: usize,
    trials: usize,
}

impl Tally {
    fn add(&mut self, task: &TaskSpec, ro: &super::Rollout) {
        let end = ro.trajectory.final_pos().unwrap_or([0.0; 2]);
        let d = distance(end, task.target_pos);
        self.dist += d;
        self.hits += usize::from(d <= task.success_radius);
        self.energy += ro.stim.mean_energy() * ro.stim.frames.len() as f64;
        self.bins += ro.stim.frames.len();
        self.trials += 1;
    }

    fn finish(&self) -> EvalMetrics {
        let n = self.trials.max(1) as f64;
        EvalMetrics {
            mean_terminal_distance: self.dist / n,
            success_rate: self.hits as f64 / n,
            mean_stim_energy: if self.bins == 0 { 0.0 } else { self.energy / self.bins as f64 },
            trials: self.trials,
        }
    }
}

fn random_stim_rng(brain_seed: u64) -> ChaCha8Rng {
    rng_for(brain_seed, "random-stim")
}

/// Runs every task once, in order, on a brain seeded with `brain_seed`.
///
/// Trials start from the same resting state while the brain's noise stream
/// continues across them. Only `model.ncp` is used in `Ncp` mode.
pub fn closed_loop_eval(
    cfg: &BrainConfig,
    brain_seed: u64,
    tasks: &[TaskSpec],
    mode: PolicyMode<'_>,
) -> Result<EvalMetrics> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one task".into()));
    }
    if let PolicyMode::RandomStim { amplitude } = mode {
        if !(amplitude >= 0.0) {
            return Err(Error::InvalidArgument("random stimulation amplitude must be >= 0".into()));
        }
    }
    let rest = BrainState::resting(cfg, brain_seed, REST_BINS);
    let mut rng = random_stim_rng(brain_seed);
    let mut st = rest.clone();
    let mut tally = Tally::default();
    for task in tasks {
        let ro = rollout(cfg, &st.restarted_from(&rest), task, mode, &PlasticityParams::disabled(), &mut rng)?;
        tally.add(task, &ro);
        st = ro.end_state;
    }
    Ok(tally.finish())
}

/// Amplitude of uniform random stimulation on `channels` channels whose
/// expected energy `channels * a^2 / 3` equals `energy`, capped at `s_max`.
pub fn matched_random_amplitude(energy: f64, channels: usize, s_max: f64) -> f64 {
    (3.0 * energy / channels.max(1) as f64).sqrt().min(s_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoadaptReport {
    /// Zero-stimulation performance with the pathway as it was before.
    pub pre_zero_stim: EvalMetrics,
    /// Zero-stimulation performance with the pathway after the sessions.
    pub post_zero_stim: EvalMetrics,
    /// Closed-loop NCP performance during each session.
    pub session_metrics: Vec<EvalMetrics>,
    /// Frobenius norm of the change of the A→B pathway.
    pub weight_change_norm: f64,
    /// Norm of the pathway change per region-B unit.
    pub row_change_norms: Vec<f64>,
    /// Total stimulation delivered per channel.
    pub stim_totals: Vec<f64>,
}

/// `cfg` with its A→B pathway replaced by the plastic copy in `state`.
pub fn with_current_pathway(cfg: &BrainConfig, state: &BrainState) -> BrainConfig {
    let mut c = cfg.clone();
    c.w_ba = state.w_ba_current.clone();
    c
}

/// Closed-loop NCP sessions with Hebbian plasticity. Each session runs every
/// task once; the pathway carries over between trials and sessions, and each
/// trial starts from the previous trial's rates with the hand reset. The NCP
/// is held fixed. Pre/post zero-stimulation evaluations use `eval_seed` on
/// the brain with the respective pathway.
pub fn coadaptation_session(
    model: &CoprocModel,
    cfg: &BrainConfig,
    state: &BrainState,
    plasticity: &PlasticityParams,
    tasks: &[TaskSpec],
    sessions: usize,
    eval_seed: u64,
) -> Result<(BrainState, CoadaptReport)> {
    let before = model.check_frozen()?;
    plasticity.validate()?;
    let pre_zero_stim = closed_loop_eval(&with_current_pathway(cfg, state), eval_seed, tasks, PolicyMode::ZeroStim)?;
    let mut st = state.clone();
    let mut unused = rng_for(eval_seed, "unused");
    let mut session_metrics = Vec::with_capacity(sessions);
    let mut stim_totals = vec![0.0; cfg.n_b];
    for _ in 0..sessions {
        let mut tally = Tally::default();
        for task in tasks {
            st.reset_hand();
            let ro = rollout(cfg, &st, task, PolicyMode::Ncp(model), plasticity, &mut unused)?;
            for f in &ro.stim.frames {
                for (t, s) in stim_totals.iter_mut().zip(f) {
                    *t += s;
                }
            }
            tally.add(task, &ro);
            st = ro.end_state;
        }
        session_metrics.push(tally.finish());
    }
    st.reset_hand();
    let post_zero_stim = closed_loop_eval(&with_current_pathway(cfg, &st), eval_seed, tasks, PolicyMode::ZeroStim)?;
    let dw = st.w_ba_current.sub(&state.w_ba_current)?;
    let row_change_norms = (0..dw.rows()).map(|i| norm(dw.row(i))).collect();
    let after = model.en.digest();
    if after != before {
        return Err(Error::FrozenEmulator { before, after });
    }
    let out = if sessions == 0 { state.clone() } else { st };
    Ok((
        out,
        CoadaptReport {
            pre_zero_stim,
            post_zero_stim,
            session_metrics,
            weight_change_norm: dw.frobenius_norm(),
            row_change_norms,
            stim_totals,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brainsim::apply_lesion;
    use crate::coproc::CoprocConfig;
    use crate::diffnet::NetParams;

    fn model(cfg: &BrainConfig) -> CoprocModel {
        let mut m = CoprocModel::init(cfg, &CoprocConfig::default(), &mut rng_for(2, "init")).unwrap();
        m.freeze_emulator();
        m
    }

    fn short_tasks() -> Vec<TaskSpec> {
        TaskSpec::radial(4, 1.0, 300.0, 0.2)
    }

    #[test]
    fn full_lesion_zero_stim_stays_near_origin() {
        let cfg = apply_lesion(&BrainConfig::desk_scale(), 1.0, 0).unwrap();
        let m = closed_loop_eval(&cfg, 3, &TaskSpec::radial(8, 1.0, 1000.0, 0.2), PolicyMode::ZeroStim).unwrap();
        assert!((m.mean_terminal_distance - 1.0).abs() < 0.05, "{m:?}");
        assert_eq!(m.mean_stim_energy, 0.0);
    }

    #[test]
    fn silent_ncp_matches_zero_stim_bit_for_bit() {
        let cfg = apply_lesion(&BrainConfig::desk_scale(), 0.8, 1).unwrap();
        let mut m = model(&cfg);
        let out = m.ncp.layers.last_mut().unwrap();
        out.weights = out.weights.scale(0.0);
        out.bias = vec![-1e4; cfg.n_b];
        let a = closed_loop_eval(&cfg, 5, &short_tasks(), PolicyMode::Ncp(&m)).unwrap();
        let b = closed_loop_eval(&cfg, 5, &short_tasks(), PolicyMode::ZeroStim).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluation_ignores_the_emulator() {
        let cfg = apply_lesion(&BrainConfig::desk_scale(), 0.8, 1).unwrap();
        let m = model(&cfg);
        let mut stripped = m.clone();
        stripped.en = NetParams::empty();
        let a = closed_loop_eval(&cfg, 5, &short_tasks(), PolicyMode::Ncp(&m)).unwrap();
        let b = closed_loop_eval(&cfg, 5, &short_tasks(), PolicyMode::Ncp(&stripped)).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_stim_energy > 0.0);
    }

    #[test]
    fn reflected_targets_give_reflected_outcome() {
        // 16 evenly tuned units: rotating by half a turn maps unit i to i + 8,
        // so a noiseless intact brain is sign-symmetric.
        let cfg = BrainConfig::desk_scale().noiseless();
        let tasks = TaskSpec::radial(8, 1.0, 500.0, 0.2);
        let mirrored: Vec<TaskSpec> = tasks
            .iter()
            .map(|t| TaskSpec {
                target_pos: [-t.target_pos[0], -t.target_pos[1]],
                ..*t
            })
            .collect();
        for (t, r) in tasks.iter().zip(&mirrored) {
            let rest = BrainState::resting(&cfg, 1, REST_BINS);
            let mut rng = rng_for(1, "x");
            let a = rollout(&cfg, &rest, t, PolicyMode::ZeroStim, &PlasticityParams::disabled(), &mut rng).unwrap();
            let b = rollout(&cfg, &rest, r, PolicyMode::ZeroStim, &PlasticityParams::disabled(), &mut rng).unwrap();
            let (pa, pb) = (a.trajectory.final_pos().unwrap(), b.trajectory.final_pos().unwrap());
            assert!((pa[0] + pb[0]).abs() < 1e-9 && (pa[1] + pb[1]).abs() < 1e-9, "{pa:?} {pb:?}");
        }
        let ma = closed_loop_eval(&cfg, 1, &tasks, PolicyMode::ZeroStim).unwrap();
        let mb = closed_loop_eval(&cfg, 1, &mirrored, PolicyMode::ZeroStim).unwrap();
        assert!((ma.mean_terminal_distance - mb.mean_terminal_distance).abs() < 1e-9);
    }

    #[test]
    fn random_stim_energy_matches_request() {
        let cfg = apply_lesion(&BrainConfig::desk_scale(), 0.8, 1).unwrap();
        let a = matched_random_amplitude(6.0, cfg.n_b, 5.0);
        let m = closed_loop_eval(&cfg, 2, &TaskSpec::radial(8, 1.0, 1000.0, 0.2), PolicyMode::RandomStim { amplitude: a })
            .unwrap();
        assert!((m.mean_stim_energy / 6.0 - 1.0).abs() < 0.05, "{m:?}");
    }

    #[test]
    fn zero_sessions_and_disabled_plasticity_leave_brain_alone() {
        let cfg = apply_lesion(&BrainConfig::desk_scale(), 0.8, 1).unwrap();
        let m = model(&cfg);
        let st = BrainState::resting(&cfg, 4, REST_BINS);
        let p = PlasticityParams::default();
        let (out, rep) = coadaptation_session(&m, &cfg, &st, &p, &short_tasks(), 0, 9).unwrap();
        assert_eq!(out, st);
        assert_eq!(rep.pre_zero_stim, rep.post_zero_stim);
        let (out, rep) =
            coadaptation_session(&m, &cfg, &st, &PlasticityParams::disabled(), &short_tasks(), 2, 9).unwrap();
        assert_eq!(out.w_ba_current, st.w_ba_current);
        assert_eq!(rep.weight_change_norm, 0.0);
    }

    #[test]
    fn pathway_changes_only_on_stimulated_rows() {
        // No tonic B drive, no pathway, no noise: region B is silent unless
        // stimulated, so only stimulated rows can potentiate.
        let mut cfg = apply_lesion(&BrainConfig::desk_scale(), 1.0, 0).unwrap();
        cfg.tonic_b = 0.0;
        let cfg = cfg.noiseless();
        let mut m = model(&cfg);
        let stimulated = [2usize, 3, 11];
        let out = m.ncp.layers.last_mut().unwrap();
        out.weights = out.weights.scale(0.0);
        for i in 0..cfg.n_b {
            out.bias[i] = if stimulated.contains(&i) { 1.0 } else { -1e4 };
        }
        let st = BrainState::resting(&cfg, 4, REST_BINS);
        let p = PlasticityParams {
            eta: 1e-6,
            ..PlasticityParams::default()
        };
        let (_, rep) = coadaptation_session(&m, &cfg, &st, &p, &short_tasks(), 1, 9).unwrap();
        for i in 0..cfg.n_b {
            assert_eq!(rep.row_change_norms[i] > 0.0, rep.stim_totals[i] > 0.0, "row {i}");
            assert_eq!(rep.row_change_norms[i] > 0.0, stimulated.contains(&i), "row {i}");
        }
    }
}
