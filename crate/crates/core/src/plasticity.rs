//! Event-triggered conditioning on the simulated brain and measurement of the
//! output shift it induces.
//!
//! The substrate has rates, not spikes, so a detected "spike" is an upward
//! crossing of the source unit's observed rate through a threshold. After a
//! fixed delay the target region-B units receive one bin of stimulation.
//! The shuffled-timing control delivers the same number of stimulation bins
//! at random times.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brainsim::{
    hebbian_update, probe_units, step, BrainConfig, BrainParams, BrainState, PlasticityParams, Region, StepInputs,
};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::seeds::rng_for;

/// Displacements smaller than this count as no response.
pub const RESPONSE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    None,
    ShuffledTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditioningProtocol {
    pub source_unit: usize,
    pub target_units: Vec<usize>,
    pub delay_ms: f64,
    pub detect_threshold_hz: f64,
    pub stim_amplitude: f64,
    /// Consecutive bins of stimulation per event.
    pub stim_bins: usize,
    pub session_bins: usize,
    pub control_mode: ControlMode,
    /// Seed of the shuffled stimulation times.
    pub seed: u64,
    /// Probe drive and duration used by [`measure_shift`].
    pub probe_amplitude: f64,
    pub probe_bins: usize,
}

impl Default for ConditioningProtocol {
    fn default() -> Self {
        Self {
            source_unit: 0,
            target_units: vec![3, 4, 5],
            delay_ms: 7.5,
            detect_threshold_hz: 50.0,
            stim_amplitude: 5.0,
            stim_bins: 3,
            session_bins: 20_000,
            control_mode: ControlMode::None,
            seed: 0,
            probe_amplitude: 50.0,
            probe_bins: 20,
        }
    }
}

impl ConditioningProtocol {
    /// Delay in whole bins, rounded up to the next bin boundary and never
    /// shorter than one bin, so stimulation always follows detection.
    pub fn delay_bins(&self, dt_ms: f64) -> usize {
        ((self.delay_ms / dt_ms - 1e-9).ceil() as usize).max(1)
    }

    pub fn validate(&self, cfg: &BrainConfig) -> Result<()> {
        if self.source_unit >= cfg.n_a {
            return Err(Error::InvalidArgument(format!(
                "source unit {} out of range for {} region-A units",
                self.source_unit, cfg.n_a
            )));
        }
        if self.target_units.is_empty() {
            return Err(Error::InvalidArgument("conditioning needs at least one target unit".into()));
        }
        if let Some(&u) = self.target_units.iter().find(|&&u| u >= cfg.n_b) {
            return Err(Error::InvalidArgument(format!(
                "target unit {u} out of range for {} region-B units",
                cfg.n_b
            )));
        }
        if !(self.delay_ms >= 0.0) || !(self.detect_threshold_hz > 0.0) || self.session_bins == 0 {
            return Err(Error::InvalidArgument(format!(
                "conditioning needs delay_ms >= 0, threshold > 0, session_bins > 0 (got {}, {}, {})",
                self.delay_ms, self.detect_threshold_hz, self.session_bins
            )));
        }
        if !(self.stim_amplitude >= 0.0) || !(self.probe_amplitude > 0.0) || self.probe_bins == 0 || self.stim_bins == 0 {
            return Err(Error::InvalidArgument(
                "stimulation and probe amplitudes must be positive, with at least one bin each".into(),
            ));
        }
        Ok(())
    }
}

/// Brain used for conditioning: no tonic region-A drive, so region A is
/// quiet between bursts and Hebbian growth is dominated by burst-locked
/// co-activity rather than by baseline rates.
pub fn conditioning_brain_params() -> BrainParams {
    BrainParams {
        tonic_a: 0.0,
        tonic_b: 10.0,
        ..BrainParams::default()
    }
}

/// Hebbian settings used for conditioning sessions.
pub fn conditioning_plasticity() -> PlasticityParams {
    PlasticityParams {
        eta: 7e-7,
        ..PlasticityParams::default()
    }
}

/// Random bursts of extra drive on every region-A unit, independently: each
/// bin a unit not already bursting starts a burst with `burst_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundDrive {
    pub burst_prob: f64,
    pub burst_bins: usize,
    pub burst_amplitude: f64,
    pub seed: u64,
}

impl Default for BackgroundDrive {
    fn default() -> Self {
        Self {
            burst_prob: 0.002,
            burst_bins: 5,
            burst_amplitude: 100.0,
            seed: 0,
        }
    }
}

impl BackgroundDrive {
    /// Drive per bin and region-A unit.
    pub fn schedule(&self, n_a: usize, bins: usize) -> Result<Vec<Vec<f64>>> {
        if !(0.0..=1.0).contains(&self.burst_prob) || !(self.burst_amplitude >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid background drive: {self:?}")));
        }
        let mut rng = rng_for(self.seed, "background-drive");
        let mut left = vec![0usize; n_a];
        let mut out = Vec::with_capacity(bins);
        for _ in 0..bins {
            let mut d = vec![0.0; n_a];
            for j in 0..n_a {
                let fire = rng.random::<f64>() < self.burst_prob;
                if left[j] == 0 && fire {
                    left[j] = self.burst_bins;
                }
                if left[j] > 0 {
                    d[j] = self.burst_amplitude;
                    left[j] -= 1;
                }
            }
            out.push(d);
        }
        Ok(out)
    }
}

/// One session. With `fixed_stim_bins` the stimulation times are given;
/// otherwise they follow threshold crossings of the source unit.
fn run_session(
    cfg: &BrainConfig,
    state: &BrainState,
    protocol: &ConditioningProtocol,
    plasticity: &PlasticityParams,
    drive: &[Vec<f64>],
    fixed_stim_bins: Option<&[bool]>,
) -> Result<(BrainState, usize)> {
    let delay = protocol.delay_bins(cfg.dt_ms);
    let bins = protocol.session_bins;
    let mut stim_at = vec![false; bins];
    if let Some(f) = fixed_stim_bins {
        stim_at.copy_from_slice(f);
    }
    let mut pattern = vec![0.0; cfg.n_b];
    for &t in &protocol.target_units {
        pattern[t] = protocol.stim_amplitude;
    }
    let silent = vec![0.0; cfg.n_b];
    let mut st = state.clone();
    let mut count = 0;
    let mut active_until = 0;
    let mut prev_obs = st.observed[protocol.source_unit];
    for k in 0..bins {
        if stim_at[k] {
            count += 1;
            active_until = active_until.max(k + protocol.stim_bins);
        }
        let stim = if k < active_until { &pattern } else { &silent };
        let mut inp = StepInputs::new([0.0; 2], stim);
        inp.drive_a = Some(&drive[k]);
        let r_a_prev = st.r_a.clone();
        let (next, obs) = step(cfg, &st, &inp)?;
        st = hebbian_update(&next, plasticity, &r_a_prev, &next.r_b)?;
        let now = obs[protocol.source_unit];
        if fixed_stim_bins.is_none()
            && prev_obs < protocol.detect_threshold_hz
            && now >= protocol.detect_threshold_hz
            && k + delay < bins
        {
            stim_at[k + delay] = true;
        }
        prev_obs = now;
    }
    Ok((st, count))
}

/// Runs one conditioning session from `state`. Returns the final state and
/// the number of stimulation events delivered.
///
/// In shuffled-timing mode the triggered session is first run on a copy to
/// count its events, then the same number of distinct onset bins is drawn
/// at random from the protocol seed. Both runs see the same background
/// drive and noise.
pub fn run_conditioning(
    cfg: &BrainConfig,
    state: &BrainState,
    protocol: &ConditioningProtocol,
    plasticity: &PlasticityParams,
    background: &BackgroundDrive,
) -> Result<(BrainState, usize)> {
    protocol.validate(cfg)?;
    plasticity.validate()?;
    let drive = background.schedule(cfg.n_a, protocol.session_bins)?;
    let triggered = run_session(cfg, state, protocol, plasticity, &drive, None)?;
    match protocol.control_mode {
        ControlMode::None => Ok(triggered),
        ControlMode::ShuffledTiming => {
            let count = triggered.1;
            let mut rng = rng_for(protocol.seed, "shuffled-timing");
            let mut at = vec![false; protocol.session_bins];
            for i in sample(&mut rng, protocol.session_bins, count) {
                at[i] = true;
            }
            run_session(cfg, state, protocol, plasticity, &drive, Some(&at))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftReport {
    pub pre_direction: [f64; 2],
    pub post_direction: [f64; 2],
    pub target_direction: [f64; 2],
    pub cosine_gain: f64,
    pub stim_count: usize,
    /// Set when any probe response fell below [`RESPONSE_FLOOR`].
    pub zero_response: bool,
}

fn unit(v: [f64; 2]) -> Option<[f64; 2]> {
    let n = norm(&v);
    (n >= RESPONSE_FLOOR).then(|| [v[0] / n, v[1] / n])
}

/// Probes the source unit before and after conditioning (noise off) and
/// reports how far its output direction turned toward that of the targets.
pub fn measure_shift(
    cfg: &BrainConfig,
    state_pre: &BrainState,
    state_post: &BrainState,
    protocol: &ConditioningProtocol,
    stim_count: usize,
) -> Result<ShiftReport> {
    protocol.validate(cfg)?;
    if state_pre.w_ba_current.shape() != state_post.w_ba_current.shape() {
        return Err(Error::dim(
            "post-conditioning pathway",
            state_pre.w_ba_current.rows() * state_pre.w_ba_current.cols(),
            state_post.w_ba_current.rows() * state_post.w_ba_current.cols(),
        ));
    }
    let (amp, bins) = (protocol.probe_amplitude, protocol.probe_bins);
    let pre = probe_units(cfg, state_pre, Region::A, &[protocol.source_unit], amp, bins)?;
    let post = probe_units(cfg, state_post, Region::A, &[protocol.source_unit], amp, bins)?;
    let target = probe_units(cfg, state_pre, Region::B, &protocol.target_units, amp, bins)?;
    let (pre, post, target) = (unit(pre), unit(post), unit(target));
    let zero = [0.0; 2];
    let cos = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    let cosine_gain = match (pre, post, target) {
        (Some(p), Some(q), Some(t)) => cos(q, t) - cos(p, t),
        _ => 0.0,
    };
    Ok(ShiftReport {
        pre_direction: pre.unwrap_or(zero),
        post_direction: post.unwrap_or(zero),
        target_direction: target.unwrap_or(zero),
        cosine_gain,
        stim_count,
        zero_response: pre.is_none() || post.is_none() || target.is_none(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brainsim::{apply_lesion, REST_BINS};
    use crate::linalg::Matrix;

    fn conditioning_eta() -> PlasticityParams {
        PlasticityParams {
            eta: 1e-6,
            ..PlasticityParams::default()
        }
    }

    fn short(mode: ControlMode) -> ConditioningProtocol {
        ConditioningProtocol {
            session_bins: 3000,
            control_mode: mode,
            ..ConditioningProtocol::default()
        }
    }

    #[test]
    fn delay_quantises_up_to_whole_bins() {
        let p = ConditioningProtocol::default();
        assert_eq!(p.delay_bins(10.0), 1);
        let zero = ConditioningProtocol {
            delay_ms: 0.0,
            ..p.clone()
        };
        assert_eq!(zero.delay_bins(10.0), 1);
        let twenty = ConditioningProtocol { delay_ms: 20.0, ..p };
        assert_eq!(twenty.delay_bins(10.0), 2);
    }

    #[test]
    fn invalid_indices_rejected() {
        let cfg = BrainConfig::desk_scale();
        let st = BrainState::new(&cfg, 1);
        let bad = ConditioningProtocol {
            target_units: vec![16],
            ..ConditioningProtocol::default()
        };
        let err = run_conditioning(&cfg, &st, &bad, &conditioning_eta(), &BackgroundDrive::default());
        assert!(err.is_err());
    }

    #[test]
    fn unreachable_threshold_never_stimulates() {
        let cfg = BrainConfig::desk_scale();
        let st = BrainState::resting(&cfg, 1, REST_BINS);
        let p = ConditioningProtocol {
            detect_threshold_hz: cfg.rate_max + 1.0,
            ..short(ControlMode::None)
        };
        let (a, n) = run_conditioning(&cfg, &st, &p, &conditioning_eta(), &BackgroundDrive::default()).unwrap();
        assert_eq!(n, 0);
        let silent = ConditioningProtocol {
            stim_amplitude: 0.0,
            ..short(ControlMode::None)
        };
        let (b, _) = run_conditioning(&cfg, &st, &silent, &conditioning_eta(), &BackgroundDrive::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffled_control_is_dose_matched() {
        let cfg = BrainConfig::desk_scale();
        let st = BrainState::resting(&cfg, 2, REST_BINS);
        let bg = BackgroundDrive::default();
        let (_, n1) = run_conditioning(&cfg, &st, &short(ControlMode::None), &conditioning_eta(), &bg).unwrap();
        let (_, n2) =
            run_conditioning(&cfg, &st, &short(ControlMode::ShuffledTiming), &conditioning_eta(), &bg).unwrap();
        assert!(n1 > 0);
        assert_eq!(n1, n2);
    }

    #[test]
    fn disabled_plasticity_keeps_weights() {
        let cfg = BrainConfig::desk_scale();
        let st = BrainState::resting(&cfg, 2, REST_BINS);
        let (out, _) = run_conditioning(
            &cfg,
            &st,
            &short(ControlMode::None),
            &PlasticityParams::disabled(),
            &BackgroundDrive::default(),
        )
        .unwrap();
        assert_eq!(out.w_ba_current, st.w_ba_current);
    }

    #[test]
    fn two_bin_hand_trace() {
        // 2 A units, 2 B units, no recurrence, no noise, leak 0.2.
        // Bin 0: unit 0 of A gets drive 300 -> r_a0 = 0.2 * 100 = 20 >= 15,
        // so the target (B unit 1) is stimulated in bin 1.
        let mut cfg = BrainConfig::desk_scale().noiseless();
        cfg.n_a = 2;
        cfg.n_b = 2;
        cfg.w_aa = Matrix::zeros(2, 2);
        cfg.w_bb = Matrix::zeros(2, 2);
        cfg.w_ba = Matrix::zeros(2, 2);
        cfg.intent_proj = Matrix::zeros(2, 2);
        cfg.readout_g = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]).unwrap();
        cfg.tonic_a = 0.0;
        cfg.tonic_b = 0.0;
        cfg.stim_coupling = 10.0;
        let st = BrainState::new(&cfg, 0);
        let p = ConditioningProtocol {
            source_unit: 0,
            target_units: vec![1],
            detect_threshold_hz: 15.0,
            stim_amplitude: 2.0,
            session_bins: 2,
            ..ConditioningProtocol::default()
        };
        let eta = 0.01;
        let plast = PlasticityParams {
            eta,
            ..PlasticityParams::default()
        };
        let drive = vec![vec![300.0, 0.0], vec![0.0, 0.0]];
        let (out, n) = run_session(&cfg, &st, &p, &plast, &drive, None).unwrap();
        assert_eq!(n, 1);
        // bin 0: r_a = (20, 0), r_b = 0 -> no change. bin 1: r_a_prev = (20, 0),
        // r_a = 16, r_b1 = 0.2 * (10 * 2) = 4 -> dw[1][0] = 0.01 * 4 * 20.
        let w = &out.w_ba_current;
        assert_eq!(w[(0, 0)], 0.0);
        assert_eq!(w[(0, 1)], 0.0);
        assert!((w[(1, 0)] - eta * 4.0 * 20.0).abs() < 1e-15);
        assert_eq!(w[(1, 1)], 0.0);
    }

    #[test]
    fn unchanged_state_has_zero_gain() {
        let cfg = BrainConfig::desk_scale();
        let st = BrainState::resting(&cfg, 1, REST_BINS);
        let r = measure_shift(&cfg, &st, &st, &ConditioningProtocol::default(), 0).unwrap();
        assert_eq!(r.cosine_gain, 0.0);
        assert!(!r.zero_response);
        assert!((norm(&r.pre_direction) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boosted_target_rows_turn_output_toward_targets() {
        let cfg = BrainConfig::desk_scale();
        let pre = BrainState::resting(&cfg, 1, REST_BINS);
        let p = ConditioningProtocol::default();
        let mut post = pre.clone();
        for &t in &p.target_units {
            post.w_ba_current[(t, p.source_unit)] += 0.1;
        }
        let r = measure_shift(&cfg, &pre, &post, &p, 0).unwrap();
        assert!(r.cosine_gain > 0.0, "{r:?}");
    }

    #[test]
    fn fully_lesioned_pathway_flags_zero_response() {
        let cfg = apply_lesion(&BrainConfig::desk_scale(), 1.0, 0).unwrap();
        let st = BrainState::resting(&cfg, 1, REST_BINS);
        let r = measure_shift(&cfg, &st, &st, &ConditioningProtocol::default(), 0).unwrap();
        assert!(r.zero_response);
        assert_eq!(r.pre_direction, [0.0, 0.0]);
    }
}
