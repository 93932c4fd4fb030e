//! Per-seed scenario stages. Each stage writes its files through a
//! [`SeedOutput`] and records metrics in its sink.
//!
//! Seeds for the individual random streams are derived from the run seed
//! with [`sub_seed`], one label per stream.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::brainsim::{apply_lesion, BrainConfig, BrainParams, BrainState, TaskSpec, REST_BINS};
use crate::checkpoint::Checkpoint;
use crate::codec::kalman::constant_velocity_dynamics;
use crate::codec::synth::{gaussian_clusters, hexagon_means, simulate_linear_system};
use crate::codec::{
    band_power_trigger, kalman_fit, kalman_step, lda_fit, multiclass_fit, multiclass_predict, rate_threshold_decode,
    KalmanBelief, KalmanModel, MulticlassOptions,
};
use crate::coproc::{
    closed_loop_eval, coadaptation_session, emulator_r2, matched_random_amplitude, sample_stim_dataset, train_emulator,
    train_ncp, CoadaptReport, CoprocModel, EmulatorHistory, EvalMetrics, NcpHistory, PolicyMode,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plasticity::{measure_shift, run_conditioning, ControlMode, ShiftReport};
use crate::seeds::{rng_for, sub_seed};
use crate::stimcode::{
    apply_blanking, continuous_pulse_train, fes_currents, interleave_schedule, packeted_pulse_train,
    torque_to_amplitude, PulseTrain,
};

use super::config::{
    CodecBlock, CoadaptBlock, DatasetBlock, EncodeBlock, EvalBlock, ExperimentConfig, LesionBlock, NcpBlock,
    PlasticityDemoBlock,
};
use super::metrics::{format_value, MetricSink};

/// Files written for one seed, relative to the run's output directory.
#[derive(Debug)]
pub struct SeedOutput {
    root: PathBuf,
    subdir: String,
    pub files: Vec<String>,
    pub metrics: MetricSink,
}

impl SeedOutput {
    pub fn new(root: &Path, scenario: &str, seed: u64) -> Result<Self> {
        let subdir = format!("seed_{seed}");
        let dir = root.join(&subdir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            subdir,
            files: vec![],
            metrics: MetricSink::new(scenario, seed),
        })
    }

    fn path_of(&mut self, name: &str) -> PathBuf {
        let rel = format!("{}/{name}", self.subdir);
        let path = self.root.join(&rel);
        self.files.push(rel);
        path
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path_of(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    pub fn checkpoint(&mut self, name: &str, ck: &Checkpoint<f64>) -> Result<()> {
        let path = self.path_of(name);
        ck.save(path)
    }
}

// ---- codec --------------------------------------------------------------

fn accuracy(pred: impl Fn(&[f64]) -> Result<usize>, xs: &[Vec<f64>], ys: &[usize]) -> Result<f64> {
    let mut hits = 0;
    for (x, &y) in xs.iter().zip(ys) {
        hits += usize::from(pred(x)? == y);
    }
    Ok(hits as f64 / ys.len().max(1) as f64)
}

/// Synthetic 2D position/velocity system observed through cosine-tuned
/// channels that respond to velocity.
pub fn synthetic_kinematics(block: &CodecBlock) -> KalmanModel<f64> {
    let m = block.kalman_obs_dim;
    let meas_b = Matrix::from_fn(m, 4, |i, j| {
        let th = std::f64::consts::TAU * i as f64 / m as f64;
        match j {
            0 => 0.2 * th.cos(),
            1 => 0.2 * th.sin(),
            2 => th.cos(),
            _ => th.sin(),
        }
    });
    KalmanModel {
        dyn_a: constant_velocity_dynamics(block.kalman_dt_s, block.kalman_damping),
        meas_b,
        q_cov: Matrix::diagonal(&[1e-5, 1e-5, 0.01, 0.01]),
        r_cov: Matrix::identity(m).scale(0.25),
    }
}

fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len().max(1) as f64).sqrt()
}

pub fn codec_stage(block: &CodecBlock, seed: u64, out: &mut SeedOutput) -> Result<()> {
    let mut table = String::from("decoder,metric,value\n");
    let mut record = |out: &mut SeedOutput, decoder: &str, metric: &str, value: f64, units: &str| {
        let _ = writeln!(table, "{decoder},{metric},{}", format_value(value));
        out.metrics.push(decoder, metric, value, units);
    };

    // Kalman: fit on the first half, filter the second half.
    let truth = synthetic_kinematics(block);
    let mut rng = rng_for(sub_seed(seed, "codec-kalman"), "simulate");
    let (xs, ys) = simulate_linear_system(&truth, &[0.0; 4], block.kalman_samples, &mut rng)?;
    let half = xs.len() / 2;
    let model = kalman_fit(&xs[..half], &ys[..half])?;
    let mut belief = KalmanBelief {
        mean: vec![0.0; 4],
        cov: Matrix::identity(4),
    };
    let (mut pos_err, mut vel_err, mut static_err) = (vec![], vec![], vec![]);
    let bt = model.meas_b.transpose();
    let normal = bt.matmul(&model.meas_b)?;
    for (x, y) in xs[half..].iter().zip(&ys[half..]) {
        belief = kalman_step(&model, &belief, y)?;
        pos_err.extend([belief.mean[0] - x[0], belief.mean[1] - x[1]]);
        vel_err.extend([belief.mean[2] - x[2], belief.mean[3] - x[3]]);
        let ls = normal.solve_vec(&bt.matvec(y)?)?;
        static_err.extend([ls[2] - x[2], ls[3] - x[3]]);
    }
    record(out, "kalman", "position_rmse", rmse(&pos_err), "units");
    record(out, "kalman", "velocity_rmse", rmse(&vel_err), "units/s");
    record(out, "kalman", "static_velocity_rmse", rmse(&static_err), "units/s");
    out.checkpoint("kalman.ckpt", &model.to_checkpoint())?;

    // LDA on two classes `separation_sigma` apart, and on identical means.
    let d = block.feature_dim.max(1);
    let mut rng = rng_for(sub_seed(seed, "codec-lda"), "draw");
    let mut far = vec![0.0; d];
    far[0] = block.separation_sigma;
    let means = [vec![0.0; d], far];
    let (tx, ty) = gaussian_clusters(&means, 1.0, block.samples_per_class, &mut rng);
    let (vx, vy) = gaussian_clusters(&means, 1.0, block.samples_per_class, &mut rng);
    let lda = lda_fit(&tx, &ty)?;
    record(out, "lda", "accuracy", accuracy(|x| Ok(lda.predict(x)), &vx, &vy)?, "fraction");
    out.checkpoint("lda.ckpt", &lda.to_checkpoint())?;
    let same = [vec![0.0; d], vec![0.0; d]];
    let (tx, ty) = gaussian_clusters(&same, 1.0, block.samples_per_class, &mut rng);
    let (vx, vy) = gaussian_clusters(&same, 1.0, block.samples_per_class, &mut rng);
    let null = lda_fit(&tx, &ty)?;
    record(out, "lda", "accuracy_identical_means", accuracy(|x| Ok(null.predict(x)), &vx, &vy)?, "fraction");

    // Six intents on a hexagon.
    let mut rng = rng_for(sub_seed(seed, "codec-multiclass"), "draw");
    let hex = hexagon_means(block.separation_sigma);
    let (tx, ty) = gaussian_clusters(&hex, 1.0, block.samples_per_class, &mut rng);
    let (vx, vy) = gaussian_clusters(&hex, 1.0, block.samples_per_class, &mut rng);
    let mc = multiclass_fit(&tx, &ty, hex.len(), &MulticlassOptions::default())?;
    record(
        out,
        "multiclass",
        "accuracy",
        accuracy(|x| Ok(multiclass_predict(&mc, x)?.0), &vx, &vy)?,
        "fraction",
    );
    out.checkpoint("multiclass.ckpt", &mc.to_checkpoint())?;

    // Operant control on a rising rate ramp.
    let ramp: Vec<f64> = (0..=60).map(f64::from).collect();
    let ctl = rate_threshold_decode(&ramp, block.rate_threshold_hz, block.rate_gain)?;
    let active = ctl.iter().filter(|&&c| c > 0.0).count() as f64 / ctl.len() as f64;
    record(out, "rate_threshold", "active_fraction", active, "fraction");
    record(out, "rate_threshold", "max_output", ctl.iter().copied().fold(0.0, f64::max), "units");

    // Band-power trigger on a noisy oscillation whose amplitude halves.
    let bp = &block.band;
    let mut rng = rng_for(sub_seed(seed, "codec-band"), "noise");
    let n = (6.0 * bp.fs_hz) as usize;
    let f0 = 0.5 * (bp.lo_hz + bp.hi_hz);
    let drop_at = n / 2;
    let sig: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / bp.fs_hz;
            let a = if i < drop_at { 1.0 } else { 0.5 };
            a * (std::f64::consts::TAU * f0 * t).sin() + 0.05 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let triggers = band_power_trigger(&sig, bp)?;
    let win = bp.window_samples();
    let drop_window = drop_at / win;
    let early = triggers.iter().filter(|&&w| w < drop_window).count();
    let latency = triggers
        .iter()
        .find(|&&w| w >= drop_window)
        .map_or(-1.0, |&w| ((w + 1) * win - drop_at) as f64 * 1000.0 / bp.fs_hz);
    record(out, "band_power", "false_triggers_before_drop", early as f64, "count");
    record(out, "band_power", "detection_latency", latency, "ms");

    out.write("decoders.csv", &table)
}

// ---- encode -------------------------------------------------------------

/// Number of packets: runs of pulses separated by more than `max_gap_ms`.
pub fn packet_count(times: &[u64], max_gap_ms: u64) -> usize {
    if times.is_empty() {
        return 0;
    }
    1 + times.windows(2).filter(|w| w[1] - w[0] > max_gap_ms).count()
}

fn gaps(times: &[u64], max_gap_ms: u64) -> Vec<u64> {
    times
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g <= max_gap_ms)
        .collect()
}

fn record_train(out: &mut SeedOutput, name: &str, train: &PulseTrain, intra_hz: f64) {
    let times = train.times();
    let max_gap = (1000.0 / intra_hz).ceil() as u64;
    let g = gaps(&times, max_gap);
    out.metrics.push(name, "pulses", times.len() as f64, "count");
    out.metrics.push(name, "packets", packet_count(&times, max_gap) as f64, "count");
    if !g.is_empty() {
        let mean = g.iter().sum::<u64>() as f64 / g.len() as f64;
        out.metrics.push(name, "mean_intra_interval", mean, "ms");
        out.metrics.push(name, "min_intra_interval", *g.iter().min().unwrap_or(&0) as f64, "ms");
        out.metrics.push(name, "max_intra_interval", *g.iter().max().unwrap_or(&0) as f64, "ms");
    }
}

pub fn encode_stage(block: &EncodeBlock, out: &mut SeedOutput) -> Result<()> {
    let rewarded = packeted_pulse_train(&block.rewarded, block.duration_ms)?;
    let unrewarded = packeted_pulse_train(&block.unrewarded, block.duration_ms)?;
    let continuous = continuous_pulse_train(
        block.continuous_hz,
        block.duration_ms,
        block.continuous_amplitude_ma,
        block.continuous_width_us,
        block.continuous_shape,
        &[0],
    )?;
    record_train(out, "rewarded", &rewarded, block.rewarded.intra_packet_hz);
    record_train(out, "unrewarded", &unrewarded, block.unrewarded.intra_packet_hz);
    out.metrics
        .push("continuous", "pulses", continuous.times().len() as f64, "count");
    out.write("pulses_rewarded.csv", &rewarded.to_csv())?;
    out.write("pulses_unrewarded.csv", &unrewarded.to_csv())?;
    out.write("pulses_continuous.csv", &continuous.to_csv())?;

    // Interleaved session: pulses only in stimulate windows, then blanking
    // checked on every 1 ms sample.
    let session = interleave_schedule(block.session_ms as f64, block.record_ms, block.stim_ms)?;
    let train = continuous_pulse_train(
        block.continuous_hz,
        block.session_ms,
        block.continuous_amplitude_ma,
        block.continuous_width_us,
        block.continuous_shape,
        &[0],
    )?
    .restrict_to(&session);
    let samples: Vec<f64> = (0..block.session_ms).map(|t| t as f64).collect();
    let blanked = apply_blanking(&samples, &train, block.blank_ms)?;
    let pulses = train.times();
    let mut violations = 0usize;
    for (&t, &ok) in samples.iter().zip(&blanked.valid) {
        let near = pulses.iter().any(|&p| (p as f64) <= t && t <= p as f64 + block.blank_ms);
        violations += usize::from(ok && near);
    }
    let valid = blanked.valid.iter().filter(|&&v| v).count() as f64 / samples.len().max(1) as f64;
    out.metrics.push("interleaved", "windows", session.windows.len() as f64, "count");
    out.metrics.push("interleaved", "pulses", pulses.len() as f64, "count");
    out.metrics.push("interleaved", "blanking_violations", violations as f64, "count");
    out.metrics.push("interleaved", "valid_fraction", valid, "fraction");
    out.write("schedule.csv", &interleave_schedule(block.duration_ms as f64, block.record_ms, block.stim_ms)?.to_csv())?;

    block.fes.validate()?;
    let mut fes = String::from("rate_hz,flexor_ma,extensor_ma\n");
    for &r in &block.fes_rates_hz {
        let (f, e) = fes_currents(r, &block.fes);
        let _ = writeln!(fes, "{},{},{}", format_value(r), format_value(f), format_value(e));
        let cond = format!("fes_rate_{}", format_value(r));
        out.metrics.push(&cond, "flexor", f, "mA");
        out.metrics.push(&cond, "extensor", e, "mA");
    }
    out.write("fes.csv", &fes)?;

    for &tq in &block.torques {
        let amps = torque_to_amplitude(tq, &block.torque_calibration)?;
        for (ch, a) in amps.iter().enumerate() {
            out.metrics
                .push(&format!("torque_{}", format_value(tq)), &format!("amplitude_ch{ch}"), *a, "mA");
        }
    }
    Ok(())
}

// ---- plasticity ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningOutcome {
    pub triggered: ShiftReport,
    pub shuffled: ShiftReport,
}

/// Triggered conditioning and its dose-matched shuffled-timing control from
/// the same resting brain.
pub fn conditioning_pair(block: &PlasticityDemoBlock, seed: u64) -> Result<(ConditioningOutcome, [BrainState; 2])> {
    let cfg = BrainConfig::from_params(&block.brain)?;
    let rest = BrainState::resting(&cfg, sub_seed(seed, "brain"), REST_BINS);
    let background = crate::plasticity::BackgroundDrive {
        seed: sub_seed(seed, "bg"),
        ..block.background
    };
    let mut reports = vec![];
    let mut states = vec![];
    for mode in [ControlMode::None, ControlMode::ShuffledTiming] {
        let protocol = crate::plasticity::ConditioningProtocol {
            control_mode: mode,
            seed: sub_seed(seed, "shuffle"),
            ..block.protocol.clone()
        };
        let (post, count) = run_conditioning(&cfg, &rest, &protocol, &block.plasticity, &background)?;
        reports.push(measure_shift(&cfg, &rest, &post, &protocol, count)?);
        states.push(post);
    }
    let [a, b]: [BrainState; 2] = states.try_into().map_err(|_| Error::InvalidArgument("two sessions".into()))?;
    Ok((
        ConditioningOutcome {
            triggered: reports[0],
            shuffled: reports[1],
        },
        [a, b],
    ))
}

pub fn plasticity_stage(block: &PlasticityDemoBlock, seed: u64, out: &mut SeedOutput) -> Result<()> {
    let (outcome, [trig, shuf]) = conditioning_pair(block, seed)?;
    let initial = BrainConfig::from_params(&block.brain)?.w_ba;
    for (cond, r, st) in [("triggered", &outcome.triggered, &trig), ("shuffled", &outcome.shuffled, &shuf)] {
        out.metrics.push(cond, "cosine_gain", r.cosine_gain, "1");
        out.metrics.push(cond, "stim_events", r.stim_count as f64, "count");
        out.metrics.push(cond, "zero_response", f64::from(u8::from(r.zero_response)), "flag");
        out.metrics
            .push(cond, "weight_change_norm", st.w_ba_current.sub(&initial)?.frobenius_norm(), "1");
    }
    out.metrics.push(
        "triggered_minus_shuffled",
        "cosine_gain",
        outcome.triggered.cosine_gain - outcome.shuffled.cosine_gain,
        "1",
    );
    out.checkpoint("brain_triggered.ckpt", &trig.to_checkpoint())?;
    out.checkpoint("brain_shuffled.ckpt", &shuf.to_checkpoint())
}

// ---- co-processor -------------------------------------------------------

/// Lesioned desk-scale substrate for one run seed.
pub fn lesioned_brain(brain: &BrainParams, lesion: &LesionBlock, seed: u64) -> Result<BrainConfig> {
    apply_lesion(&BrainConfig::from_params(brain)?, lesion.fraction, sub_seed(seed, "lesion"))
}

pub fn eval_tasks(block: &EvalBlock) -> Vec<TaskSpec> {
    TaskSpec::radial(block.targets, block.radius, block.duration_ms, block.success_radius)
}

#[derive(Debug, Clone)]
pub struct EmulatorOutcome {
    pub brain: BrainConfig,
    pub model: CoprocModel,
    pub history: EmulatorHistory,
    pub r2: f64,
}

pub fn emulator_run(cfg: &ExperimentConfig, seed: u64) -> Result<EmulatorOutcome> {
    let brain = lesioned_brain(cfg.brain()?, cfg.lesion()?, seed)?;
    let ds: &DatasetBlock = cfg.dataset()?;
    let data = sample_stim_dataset(&brain, sub_seed(seed, "dataset"), ds.trials, ds.trial_bins, &ds.sampler)?;
    let init = CoprocModel::init(&brain, cfg.coproc()?, &mut rng_for(seed, "init"))?;
    let settings = crate::coproc::EmulatorTraining {
        seed,
        ..*cfg.emulator()?
    };
    let (model, history) = train_emulator(&init, &data, &settings.optimizer(&init), &settings)?;
    let r2 = emulator_r2(&model, &data)?;
    Ok(EmulatorOutcome {
        brain,
        model,
        history,
        r2,
    })
}

pub fn ncp_run(block: &NcpBlock, em: &EmulatorOutcome, seed: u64) -> Result<(CoprocModel, NcpHistory)> {
    let settings = crate::coproc::NcpTraining {
        seed: sub_seed(seed, "ncp"),
        ..block.training
    };
    train_ncp(&em.model, &em.brain, &block.tasks, &settings.optimizer(&em.model), &settings)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyComparison {
    pub ncp: EvalMetrics,
    pub zero_stim: EvalMetrics,
    pub random_stim: EvalMetrics,
    pub random_amplitude: f64,
}

/// NCP, no stimulation, and uniform random stimulation whose expected energy
/// matches the NCP's, all on the same evaluation seed.
pub fn compare_policies(brain: &BrainConfig, model: &CoprocModel, block: &EvalBlock, seed: u64) -> Result<PolicyComparison> {
    let tasks = eval_tasks(block);
    let es = sub_seed(seed, "eval");
    let ncp = closed_loop_eval(brain, es, &tasks, PolicyMode::Ncp(model))?;
    let zero_stim = closed_loop_eval(brain, es, &tasks, PolicyMode::ZeroStim)?;
    let random_amplitude = matched_random_amplitude(ncp.mean_stim_energy, model.stim_channels(), model.s_max);
    let random_stim = closed_loop_eval(
        brain,
        es,
        &tasks,
        PolicyMode::RandomStim {
            amplitude: random_amplitude,
        },
    )?;
    Ok(PolicyComparison {
        ncp,
        zero_stim,
        random_stim,
        random_amplitude,
    })
}

pub fn coadapt_run(block: &CoadaptBlock, eval: &EvalBlock, brain: &BrainConfig, model: &CoprocModel, seed: u64) -> Result<(BrainState, CoadaptReport)> {
    let start = BrainState::resting(brain, sub_seed(seed, "coadapt"), REST_BINS);
    coadaptation_session(
        model,
        brain,
        &start,
        &block.plasticity,
        &eval_tasks(eval),
        block.sessions,
        sub_seed(seed, "eval"),
    )
}

fn push_eval(out: &mut SeedOutput, cond: &str, m: &EvalMetrics) {
    out.metrics.push(cond, "mean_terminal_distance", m.mean_terminal_distance, "units");
    out.metrics.push(cond, "success_rate", m.success_rate, "fraction");
    out.metrics.push(cond, "mean_stim_energy", m.mean_stim_energy, "amp^2");
}

pub fn record_comparison(out: &mut SeedOutput, cmp: &PolicyComparison) {
    push_eval(out, "ncp", &cmp.ncp);
    push_eval(out, "zero_stim", &cmp.zero_stim);
    push_eval(out, "random_stim", &cmp.random_stim);
    out.metrics.push("random_stim", "amplitude", cmp.random_amplitude, "amp");
}

fn emulator_history_csv(h: &EmulatorHistory) -> String {
    let mut s = String::from("epoch,train_loss,validation_loss\n");
    for (i, (t, v)) in h.train_loss.iter().zip(&h.validation_loss).enumerate() {
        let _ = writeln!(s, "{i},{},{}", format_value(*t), format_value(*v));
    }
    s
}

fn ncp_history_csv(h: &NcpHistory) -> String {
    let mut s = String::from("session,predicted_loss,terminal_term,path_term,stim_energy_term,terminal_distance\n");
    for (i, (p, d)) in h.predicted_loss.iter().zip(&h.terminal_distance).enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{}",
            format_value(p.total),
            format_value(p.terminal_term),
            format_value(p.path_term),
            format_value(p.stim_energy_term),
            format_value(*d)
        );
    }
    s
}

fn coadapt_history_csv(r: &CoadaptReport) -> String {
    let mut s = String::from("session,mean_terminal_distance,success_rate,mean_stim_energy\n");
    for (i, m) in r.session_metrics.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{}",
            format_value(m.mean_terminal_distance),
            format_value(m.success_rate),
            format_value(m.mean_stim_energy)
        );
    }
    s
}

/// Emulator training, optionally followed by NCP training, evaluation and
/// co-adaptation.
pub fn coproc_stage(cfg: &ExperimentConfig, seed: u64, depth: CoprocDepth, out: &mut SeedOutput) -> Result<()> {
    let em = emulator_run(cfg, seed)?;
    let h = &em.history;
    out.metrics.push("emulator", "validation_r2", em.r2, "1");
    out.metrics
        .push("emulator", "final_train_loss", *h.train_loss.last().unwrap_or(&f64::NAN), "units^2");
    out.metrics.push(
        "emulator",
        "final_validation_loss",
        *h.validation_loss.last().unwrap_or(&f64::NAN),
        "units^2",
    );
    out.write("history_emulator.csv", &emulator_history_csv(h))?;
    if depth == CoprocDepth::Emulator {
        return out.checkpoint("model.ckpt", &em.model.to_checkpoint());
    }

    let frozen = em.model.check_frozen()?;
    let (model, nh) = ncp_run(cfg.ncp()?, &em, seed)?;
    let after = model.check_frozen()?;
    out.metrics
        .push("ncp_training", "emulator_digest_unchanged", f64::from(u8::from(frozen == after)), "flag");
    out.write("history_ncp.csv", &ncp_history_csv(&nh))?;
    out.checkpoint("model.ckpt", &model.to_checkpoint())?;
    let cmp = compare_policies(&em.brain, &model, cfg.eval()?, seed)?;
    record_comparison(out, &cmp);
    if depth == CoprocDepth::Ncp {
        return Ok(());
    }

    let (state, rep) = coadapt_run(cfg.coadapt()?, cfg.eval()?, &em.brain, &model, seed)?;
    let end = model.check_frozen()?;
    push_eval(out, "coadapt_pre", &rep.pre_zero_stim);
    push_eval(out, "coadapt_post", &rep.post_zero_stim);
    out.metrics.push("coadapt", "weight_change_norm", rep.weight_change_norm, "1");
    out.metrics
        .push("coadapt", "emulator_digest_unchanged", f64::from(u8::from(end == frozen)), "flag");
    out.write("history_coadapt.csv", &coadapt_history_csv(&rep))?;
    out.checkpoint("brain_coadapt.ckpt", &state.to_checkpoint())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoprocDepth {
    Emulator,
    Ncp,
    Coadapt,
}
