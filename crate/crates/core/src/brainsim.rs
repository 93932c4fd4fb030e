//! Two-region rate-network substrate.
//!
//! Region A encodes movement intent (the error between target and hand);
//! region B drives a 2D effector through a fixed linear readout. The A→B
//! matrix is the pathway that lesions remove and Hebbian plasticity
//! rebuilds. Stimulation enters region B.
//!
//! Rates follow a leaky update toward a rectified, saturating drive:
//!
//! ```text
//! r <- (1 - dt/tau) r + (dt/tau) clamp(drive, 0, rate_max)
//! ```
//!
//! with region B's drive including `w_ba * r_a` from the previous bin.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedArray};
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

/// Per-unit firing rates (Hz).
pub type RateVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct BrainConfig {
    pub n_a: usize,
    pub n_b: usize,
    pub dt_ms: f64,
    pub tau_ms: f64,
    pub w_aa: Matrix<f64>,
    pub w_bb: Matrix<f64>,
    /// A→B pathway, shape `(n_b, n_a)`.
    pub w_ba: Matrix<f64>,
    /// Maps the 2D intent vector to region-A drive, shape `(n_a, 2)`.
    pub intent_proj: Matrix<f64>,
    /// Maps region-B rates to hand velocity (units/s), shape `(2, n_b)`.
    pub readout_g: Matrix<f64>,
    pub tonic_a: f64,
    pub tonic_b: f64,
    /// Std of the Gaussian drive noise added to every unit each bin.
    pub noise_std: f64,
    /// Std of the recording noise on the observed region-A rates.
    pub obs_noise_std: f64,
    /// Region-B drive per unit of stimulation.
    pub stim_coupling: f64,
    pub rate_max: f64,
}

/// Scalar knobs of the cosine-tuned default substrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrainParams {
    pub n_a: usize,
    pub n_b: usize,
    pub dt_ms: f64,
    pub tau_ms: f64,
    pub rate_max: f64,
    /// Region-A drive per unit of intent along a unit's preferred direction.
    pub intent_gain: f64,
    pub tonic_a: f64,
    pub tonic_b: f64,
    /// Peak A→B weight between units with equal preferred direction.
    pub pathway_gain: f64,
    /// Hand speed (units/s) per Hz of a region-B unit along its direction.
    pub readout_gain: f64,
    pub stim_coupling: f64,
    pub noise_std: f64,
    pub obs_noise_std: f64,
}

impl Default for BrainParams {
    fn default() -> Self {
        Self {
            n_a: 16,
            n_b: 16,
            dt_ms: 10.0,
            tau_ms: 50.0,
            rate_max: 100.0,
            intent_gain: 40.0,
            tonic_a: 5.0,
            tonic_b: 20.0,
            pathway_gain: 0.25,
            readout_gain: 0.01,
            stim_coupling: 10.0,
            noise_std: 1.0,
            obs_noise_std: 0.5,
        }
    }
}

/// Preferred direction (radians) of unit `i` out of `n`, evenly spaced.
pub fn preferred_angle(i: usize, n: usize) -> f64 {
    2.0 * PI * i as f64 / n as f64
}

impl BrainConfig {
    /// Cosine-tuned substrate: region-A and region-B units have evenly
    /// spaced preferred directions, the pathway connects units with similar
    /// directions, and the readout moves the hand along each B unit's
    /// direction. The readout columns sum to zero, so uniform B activity
    /// produces no movement.
    pub fn from_params(p: &BrainParams) -> Result<Self> {
        let (n_a, n_b) = (p.n_a, p.n_b);
        let ang_a: Vec<f64> = (0..n_a).map(|j| preferred_angle(j, n_a)).collect();
        let ang_b: Vec<f64> = (0..n_b).map(|i| preferred_angle(i, n_b)).collect();
        let cfg = Self {
            n_a,
            n_b,
            dt_ms: p.dt_ms,
            tau_ms: p.tau_ms,
            w_aa: Matrix::zeros(n_a, n_a),
            w_bb: Matrix::zeros(n_b, n_b),
            w_ba: Matrix::from_fn(n_b, n_a, |i, j| {
                p.pathway_gain * (ang_b[i] - ang_a[j]).cos().max(0.0)
            }),
            intent_proj: Matrix::from_fn(n_a, 2, |j, k| {
                p.intent_gain * if k == 0 { ang_a[j].cos() } else { ang_a[j].sin() }
            }),
            readout_g: Matrix::from_fn(2, n_b, |k, i| {
                p.readout_gain * if k == 0 { ang_b[i].cos() } else { ang_b[i].sin() }
            }),
            tonic_a: p.tonic_a,
            tonic_b: p.tonic_b,
            noise_std: p.noise_std,
            obs_noise_std: p.obs_noise_std,
            stim_coupling: p.stim_coupling,
            rate_max: p.rate_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn desk_scale() -> Self {
        Self::from_params(&BrainParams::default()).expect("default parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("brain config: {m}")));
        if !(self.dt_ms > 0.0) {
            return bad("dt_ms must be > 0");
        }
        if !(self.tau_ms >= self.dt_ms) {
            return bad("tau_ms must be >= dt_ms");
        }
        if !(self.noise_std >= 0.0) || !(self.obs_noise_std >= 0.0) {
            return bad("noise std must be >= 0");
        }
        if !(self.rate_max > 0.0) {
            return bad("rate_max must be > 0");
        }
        let shapes = [
            ("w_aa", &self.w_aa, (self.n_a, self.n_a)),
            ("w_bb", &self.w_bb, (self.n_b, self.n_b)),
            ("w_ba", &self.w_ba, (self.n_b, self.n_a)),
            ("intent_proj", &self.intent_proj, (self.n_a, 2)),
            ("readout_g", &self.readout_g, (2, self.n_b)),
        ];
        for (name, m, shape) in shapes {
            if m.shape() != shape {
                return Err(Error::dim(format!("brain config {name}"), shape.0 * shape.1, m.rows() * m.cols()));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("brain config {name}")));
            }
        }
        Ok(())
    }

    fn leak(&self) -> f64 {
        self.dt_ms / self.tau_ms
    }

    /// Same configuration with all noise switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_std: 0.0,
            obs_noise_std: 0.0,
            ..self.clone()
        }
    }
}

/// Zeroes `round(fraction * entries)` entries of the A→B pathway, chosen by
/// a seeded shuffle.
pub fn apply_lesion(cfg: &BrainConfig, fraction: f64, seed: u64) -> Result<BrainConfig> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "lesion fraction {fraction} outside [0, 1]"
        )));
    }
    let total = cfg.w_ba.as_slice().len();
    let count = (fraction * total as f64).round() as usize;
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = cfg.clone();
    let w = out.w_ba.as_mut_slice();
    for &i in &idx[..count] {
        w[i] = 0.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlasticityParams {
    pub eta: f64,
    pub lambda_decay: f64,
    pub w_clip: f64,
    pub enabled: bool,
}

impl Default for PlasticityParams {
    fn default() -> Self {
        Self {
            eta: 3e-8,
            lambda_decay: 0.0,
            w_clip: 1.0,
            enabled: true,
        }
    }
}

impl PlasticityParams {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !(self.lambda_decay >= 0.0) || !(self.w_clip > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "plasticity parameters need eta >= 0, lambda_decay >= 0, w_clip > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Settling bins commonly used with [`BrainState::resting`].
pub const REST_BINS: usize = 100;

#[derive(Debug, Clone)]
pub struct BrainState {
    pub r_a: RateVector,
    pub r_b: RateVector,
    /// Plastic copy of the A→B pathway.
    pub w_ba_current: Matrix<f64>,
    pub hand_pos: [f64; 2],
    pub hand_vel: [f64; 2],
    /// Most recent noisy observation of region A.
    pub observed: RateVector,
    pub rng: ChaCha8Rng,
}

impl PartialEq for BrainState {
    fn eq(&self, other: &Self) -> bool {
        self.r_a == other.r_a
            && self.r_b == other.r_b
            && self.w_ba_current == other.w_ba_current
            && self.hand_pos == other.hand_pos
            && self.hand_vel == other.hand_vel
            && self.observed == other.observed
            && self.rng == other.rng
    }
}

impl BrainState {
    /// Quiescent state: zero rates, hand at the origin.
    pub fn new(cfg: &BrainConfig, seed: u64) -> Self {
        Self {
            r_a: vec![0.0; cfg.n_a],
            r_b: vec![0.0; cfg.n_b],
            w_ba_current: cfg.w_ba.clone(),
            hand_pos: [0.0; 2],
            hand_vel: [0.0; 2],
            observed: vec![0.0; cfg.n_a],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// State after `bins` steps with no intent and no stimulation, with the
    /// hand then returned to the origin. Noise is not drawn while settling.
    pub fn resting(cfg: &BrainConfig, seed: u64, bins: usize) -> Self {
        let quiet = cfg.noiseless();
        let mut st = Self::new(cfg, seed);
        let zero = vec![0.0; cfg.n_b];
        for _ in 0..bins {
            st = step(&quiet, &st, &StepInputs::new([0.0; 2], &zero)).expect("dimensions consistent").0;
        }
        st.rng = ChaCha8Rng::seed_from_u64(seed);
        st.reset_hand();
        st
    }

    pub fn reset_hand(&mut self) {
        self.hand_pos = [0.0; 2];
        self.hand_vel = [0.0; 2];
    }

    /// Copy with rates and hand reset to `rest`, keeping pathway and RNG.
    pub fn restarted_from(&self, rest: &BrainState) -> Self {
        Self {
            r_a: rest.r_a.clone(),
            r_b: rest.r_b.clone(),
            observed: rest.observed.clone(),
            hand_pos: [0.0; 2],
            hand_vel: [0.0; 2],
            w_ba_current: self.w_ba_current.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint<f64> {
        let mut ck = Checkpoint::new();
        ck.push(NamedArray::vector("r_a", "rates", &self.r_a));
        ck.push(NamedArray::vector("r_b", "rates", &self.r_b));
        ck.push(NamedArray::matrix("w_ba", "pathway", &self.w_ba_current));
        ck.push(NamedArray::vector("hand_pos", "kinematics", &self.hand_pos));
        ck.push(NamedArray::vector("hand_vel", "kinematics", &self.hand_vel));
        ck.push(NamedArray::vector("observed", "rates", &self.observed));
        let seed: Vec<f64> = self.rng.get_seed().iter().map(|&b| b as f64).collect();
        ck.push(NamedArray::vector("rng_seed", "bytes", &seed));
        let pos = self.rng.get_word_pos();
        let words: Vec<f64> = (0..4).map(|k| ((pos >> (32 * k)) & 0xffff_ffff) as f64).collect();
        ck.push(NamedArray::vector("rng_word_pos", "u32_words", &words));
        ck.push(NamedArray::scalar("rng_stream", "u64", self.rng.get_stream() as f64));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint<f64>) -> Result<Self> {
        let v = |n: &str| ck.require(n).map(|a| a.values.clone());
        let pair = |n: &str| -> Result<[f64; 2]> {
            let x = v(n)?;
            if x.len() != 2 {
                return Err(Error::dim(n, 2, x.len()));
            }
            Ok([x[0], x[1]])
        };
        let seed_vals = v("rng_seed")?;
        if seed_vals.len() != 32 {
            return Err(Error::dim("rng_seed", 32, seed_vals.len()));
        }
        let mut seed = [0u8; 32];
        for (s, &x) in seed.iter_mut().zip(&seed_vals) {
            *s = x as u8;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(ck.require("rng_stream")?.values[0] as u64);
        let words = v("rng_word_pos")?;
        let pos = words
            .iter()
            .enumerate()
            .fold(0u128, |acc, (k, &w)| acc | ((w as u128) << (32 * k)));
        rng.set_word_pos(pos);
        Ok(Self {
            r_a: v("r_a")?,
            r_b: v("r_b")?,
            w_ba_current: ck.require("w_ba")?.to_matrix(),
            hand_pos: pair("hand_pos")?,
            hand_vel: pair("hand_vel")?,
            observed: v("observed")?,
            rng,
        })
    }
}

/// External inputs for one bin.
#[derive(Debug, Clone)]
pub struct StepInputs<'a> {
    pub intent: [f64; 2],
    pub stim: &'a [f64],
    /// Extra region-A drive (background activity, probing).
    pub drive_a: Option<&'a [f64]>,
    /// Extra region-B drive (probing).
    pub drive_b: Option<&'a [f64]>,
}

impl<'a> StepInputs<'a> {
    pub fn new(intent: [f64; 2], stim: &'a [f64]) -> Self {
        Self {
            intent,
            stim,
            drive_a: None,
            drive_b: None,
        }
    }
}

/// One simulation bin. Returns the next state and the noisy observation of
/// region A.
pub fn brain_step(
    cfg: &BrainConfig,
    state: &BrainState,
    intent: [f64; 2],
    stim_drive: &[f64],
) -> Result<(BrainState, RateVector)> {
    step(cfg, state, &StepInputs::new(intent, stim_drive))
}

pub fn step(cfg: &BrainConfig, state: &BrainState, inp: &StepInputs<'_>) -> Result<(BrainState, RateVector)> {
    if inp.stim.len() != cfg.n_b {
        return Err(Error::dim("stimulation drive", cfg.n_b, inp.stim.len()));
    }
    if let Some(i) = inp.stim.iter().position(|&s| !(s >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "stimulation drive on channel {i} must be >= 0"
        )));
    }
    if state.r_a.len() != cfg.n_a || state.r_b.len() != cfg.n_b {
        return Err(Error::dim("brain state rates", cfg.n_a + cfg.n_b, state.r_a.len() + state.r_b.len()));
    }
    for (name, d, n) in [("drive_a", inp.drive_a, cfg.n_a), ("drive_b", inp.drive_b, cfg.n_b)] {
        if let Some(d) = d {
            if d.len() != n {
                return Err(Error::dim(name, n, d.len()));
            }
        }
    }

    let mut next = state.clone();
    let leak = cfg.leak();
    let phi = |x: f64| x.clamp(0.0, cfg.rate_max);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut drive_a = cfg.w_aa.matvec(&state.r_a)?;
    let intent = cfg.intent_proj.matvec(&inp.intent)?;
    for j in 0..cfg.n_a {
        drive_a[j] += cfg.tonic_a + intent[j] + inp.drive_a.map_or(0.0, |d| d[j]);
        drive_a[j] += cfg.noise_std * gauss(&mut next.rng);
    }

    let mut drive_b = cfg.w_bb.matvec(&state.r_b)?;
    let from_a = state.w_ba_current.matvec(&state.r_a)?;
    for i in 0..cfg.n_b {
        drive_b[i] += cfg.tonic_b
            + from_a[i]
            + cfg.stim_coupling * inp.stim[i]
            + inp.drive_b.map_or(0.0, |d| d[i]);
        drive_b[i] += cfg.noise_std * gauss(&mut next.rng);
    }

    for j in 0..cfg.n_a {
        next.r_a[j] = phi((1.0 - leak) * state.r_a[j] + leak * phi(drive_a[j]));
    }
    for i in 0..cfg.n_b {
        next.r_b[i] = phi((1.0 - leak) * state.r_b[i] + leak * phi(drive_b[i]));
    }

    let v = cfg.readout_g.matvec(&next.r_b)?;
    next.hand_vel = [v[0], v[1]];
    let dt_s = cfg.dt_ms / 1000.0;
    next.hand_pos = [
        state.hand_pos[0] + dt_s * v[0],
        state.hand_pos[1] + dt_s * v[1],
    ];

    let mut observed = next.r_a.clone();
    for o in &mut observed {
        *o = (*o + cfg.obs_noise_std * gauss(&mut next.rng)).max(0.0);
    }
    next.observed = observed.clone();
    Ok((next, observed))
}

/// Pre-before-post Hebbian update with decay and clipping:
/// `dw[i][j] = eta * r_b_now[i] * r_a_prev[j] - lambda * w[i][j]`.
pub fn hebbian_update(
    state: &BrainState,
    params: &PlasticityParams,
    r_a_prev: &[f64],
    r_b_now: &[f64],
) -> Result<BrainState> {
    let mut next = state.clone();
    if !params.enabled {
        return Ok(next);
    }
    let w = &mut next.w_ba_current;
    if r_a_prev.len() != w.cols() || r_b_now.len() != w.rows() {
        return Err(Error::dim("hebbian rates", w.rows() + w.cols(), r_a_prev.len() + r_b_now.len()));
    }
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let cur = w[(i, j)];
            let dw = params.eta * r_b_now[i] * r_a_prev[j] - params.lambda_decay * cur;
            w[(i, j)] = (cur + dw).clamp(-params.w_clip, params.w_clip);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t_ms: f64,
    pub hand_pos: [f64; 2],
    pub hand_vel: [f64; 2],
}

/// Hand kinematics per bin; `points[k].t_ms = (k + 1) * dt_ms`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn final_pos(&self) -> Option<[f64; 2]> {
        self.points.last().map(|p| p.hand_pos)
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| p.hand_pos).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Movement target in effector coordinates.
    pub target_pos: [f64; 2],
    pub duration_ms: f64,
    pub success_radius: f64,
}

impl TaskSpec {
    pub fn bins(&self, cfg: &BrainConfig) -> Result<usize> {
        let n = self.duration_ms / cfg.dt_ms;
        if !(self.duration_ms > 0.0) || (n - n.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "task duration {} ms is not a positive multiple of dt {} ms",
                self.duration_ms, cfg.dt_ms
            )));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::InvalidArgument("success radius must be > 0".into()));
        }
        Ok(n.round() as usize)
    }

    /// `n` targets evenly spaced on a circle, the first on the +x axis.
    pub fn radial(n: usize, radius: f64, duration_ms: f64, success_radius: f64) -> Vec<TaskSpec> {
        (0..n)
            .map(|k| {
                let a = preferred_angle(k, n);
                TaskSpec {
                    target_pos: [radius * a.cos(), radius * a.sin()],
                    duration_ms,
                    success_radius,
                }
            })
            .collect()
    }
}

/// Intent presented to region A: the vector from hand to target.
pub fn intent_for(task: &TaskSpec, state: &BrainState) -> [f64; 2] {
    [
        task.target_pos[0] - state.hand_pos[0],
        task.target_pos[1] - state.hand_pos[1],
    ]
}

/// Runs a trial. Each bin the policy sees the latest observation of region
/// A (and the bin index) and returns the stimulation drive; the brain then
/// steps, and plasticity (if enabled) applies with the previous-bin region-A
/// rates as presynaptic activity.
pub fn run_trial<P>(
    cfg: &BrainConfig,
    state: &BrainState,
    task: &TaskSpec,
    mut policy: P,
    plasticity: &PlasticityParams,
) -> Result<(Trajectory, BrainState)>
where
    P: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    let bins = task.bins(cfg)?;
    let mut st = state.clone();
    let mut traj = Trajectory {
        points: Vec::with_capacity(bins),
    };
    for k in 0..bins {
        let stim = policy(k, &st.observed)?;
        if stim.len() != cfg.n_b {
            return Err(Error::dim(format!("policy output at bin {k}"), cfg.n_b, stim.len()));
        }
        let intent = intent_for(task, &st);
        let r_a_prev = st.r_a.clone();
        let (next, _) = brain_step(cfg, &st, intent, &stim)?;
        st = if plasticity.enabled {
            hebbian_update(&next, plasticity, &r_a_prev, &next.r_b)?
        } else {
            next
        };
        traj.points.push(TrajectoryPoint {
            t_ms: (k + 1) as f64 * cfg.dt_ms,
            hand_pos: st.hand_pos,
            hand_vel: st.hand_vel,
        });
    }
    Ok((traj, st))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    A,
    B,
}

/// Net hand displacement caused by driving `units` of `region` with
/// `amplitude` for `n_bins`, noise off. The displacement of an identical
/// unprobed run from the same state is subtracted, so only the probe's
/// contribution remains.
pub fn probe_units(
    cfg: &BrainConfig,
    state: &BrainState,
    region: Region,
    units: &[usize],
    amplitude: f64,
    n_bins: usize,
) -> Result<[f64; 2]> {
    let n = match region {
        Region::A => cfg.n_a,
        Region::B => cfg.n_b,
    };
    if let Some(&u) = units.iter().find(|&&u| u >= n) {
        return Err(Error::InvalidArgument(format!(
            "probe unit {u} out of range for region of {n} units"
        )));
    }
    if !(amplitude > 0.0) {
        return Err(Error::InvalidArgument("probe amplitude must be > 0".into()));
    }
    let quiet = cfg.noiseless();
    let mut drive = vec![0.0; n];
    for &u in units {
        drive[u] = amplitude;
    }
    let zero_stim = vec![0.0; cfg.n_b];
    let run = |probe: Option<&[f64]>| -> Result<[f64; 2]> {
        let mut st = state.clone();
        st.reset_hand();
        for _ in 0..n_bins {
            let mut inp = StepInputs::new([0.0; 2], &zero_stim);
            match region {
                Region::A => inp.drive_a = probe,
                Region::B => inp.drive_b = probe,
            }
            st = step(&quiet, &st, &inp)?.0;
        }
        Ok(st.hand_pos)
    };
    let probed = run(Some(&drive))?;
    let base = run(None)?;
    Ok([probed[0] - base[0], probed[1] - base[1]])
}

pub fn probe_site(
    cfg: &BrainConfig,
    state: &BrainState,
    region: Region,
    unit_index: usize,
    probe_amplitude: f64,
    n_bins: usize,
) -> Result<[f64; 2]> {
    probe_units(cfg, state, region, &[unit_index], probe_amplitude, n_bins)
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    norm(&[a[0] - b[0], a[1] - b[1]])
}
