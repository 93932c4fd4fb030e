//! Stimulation encoders and timing.
//!
//! Pulses are events on a 1 ms grid. Sub-millisecond periods use
//! cumulative-phase rounding (half away from zero), so a 2.5 ms period is
//! emitted as alternating 3 and 2 ms intervals. The first pulse and the
//! first packet sit at t = 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    Biphasic,
    Monophasic,
}

impl PulseShape {
    pub fn as_str(self) -> &'static str {
        match self {
            PulseShape::Biphasic => "biphasic",
            PulseShape::Monophasic => "monophasic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTrainSpec {
    pub intra_packet_hz: f64,
    /// Zero means a single packet at t = 0.
    pub packet_hz: f64,
    #[serde(default = "default_packet_ms")]
    pub packet_ms: f64,
    pub amplitude_ma: f64,
    pub pulse_width_us: f64,
    pub shape: PulseShape,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
}

fn default_packet_ms() -> f64 {
    50.0
}

fn default_channels() -> Vec<usize> {
    vec![0]
}

impl PulseTrainSpec {
    /// 200 Hz pulses in 10 Hz packets.
    pub fn rewarded() -> Self {
        Self {
            intra_packet_hz: 200.0,
            packet_hz: 10.0,
            packet_ms: default_packet_ms(),
            amplitude_ma: 0.06,
            pulse_width_us: 200.0,
            shape: PulseShape::Biphasic,
            channels: default_channels(),
        }
    }

    /// 400 Hz pulses in 5 Hz packets.
    pub fn unrewarded() -> Self {
        Self {
            intra_packet_hz: 400.0,
            packet_hz: 5.0,
            ..Self::rewarded()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.intra_packet_hz > 0.0) {
            return bad(format!("intra_packet_hz must be positive, got {}", self.intra_packet_hz));
        }
        if 1000.0 / self.intra_packet_hz < 1.0 {
            return bad(format!(
                "{} Hz is not resolvable on the 1 ms grid",
                self.intra_packet_hz
            ));
        }
        if !(self.packet_hz >= 0.0) || !(self.packet_ms > 0.0) {
            return bad(format!(
                "packet_hz must be >= 0 and packet_ms > 0, got {} and {}",
                self.packet_hz, self.packet_ms
            ));
        }
        if self.packet_hz > 0.0 && self.packet_ms > 1000.0 / self.packet_hz {
            return bad(format!(
                "{} ms packets overlap at {} Hz",
                self.packet_ms, self.packet_hz
            ));
        }
        check_pulse(self.amplitude_ma, self.pulse_width_us)?;
        if self.channels.is_empty() {
            return bad("at least one channel is required".into());
        }
        Ok(())
    }
}

fn check_pulse(amplitude_ma: f64, width_us: f64) -> Result<()> {
    if !(amplitude_ma >= 0.0) || !(width_us > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "amplitude must be >= 0 and width > 0, got {amplitude_ma} mA and {width_us} us"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub t_ms: u64,
    pub channel: usize,
    pub amplitude_ma: f64,
    pub width_us: f64,
    pub shape: PulseShape,
}

/// Events sorted by time, then channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseTrain {
    pub events: Vec<PulseEvent>,
}

pub const PULSE_CSV_HEADER: &str = "t_ms,channel,amplitude_ma,width_us,shape";

impl PulseTrain {
    fn from_times(times: &[u64], channels: &[usize], amplitude_ma: f64, width_us: f64, shape: PulseShape) -> Self {
        let mut events = Vec::with_capacity(times.len() * channels.len());
        for &t_ms in times {
            for &channel in channels {
                events.push(PulseEvent {
                    t_ms,
                    channel,
                    amplitude_ma,
                    width_us,
                    shape,
                });
            }
        }
        events.sort_by_key(|e| (e.t_ms, e.channel));
        Self { events }
    }

    /// Distinct pulse times.
    pub fn times(&self) -> Vec<u64> {
        let mut t: Vec<u64> = self.events.iter().map(|e| e.t_ms).collect();
        t.dedup();
        t
    }

    /// Keeps only events inside stimulate windows.
    pub fn restrict_to(&self, schedule: &Schedule) -> Self {
        Self {
            events: self
                .events
                .iter()
                .filter(|e| schedule.kind_at(e.t_ms as f64) == Some(WindowKind::Stimulate))
                .copied()
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(PULSE_CSV_HEADER);
        s.push('\n');
        for e in &self.events {
            let _ = writeln!(s, "{},{},{},{},{}", e.t_ms, e.channel, e.amplitude_ma, e.width_us, e.shape.as_str());
        }
        s
    }
}

/// Grid times `round(origin + i·period)` for `i = 0, 1, ...` while the exact
/// phase stays below `span` and the rounded time below `limit`.
fn grid_times(origin: f64, period: f64, span: f64, limit: u64, out: &mut Vec<u64>) {
    let mut i = 0u64;
    loop {
        let offset = i as f64 * period;
        if offset >= span {
            break;
        }
        let t = (origin + offset).round() as u64;
        if t >= limit {
            break;
        }
        out.push(t);
        i += 1;
    }
}

pub fn packeted_pulse_train(spec: &PulseTrainSpec, duration_ms: u64) -> Result<PulseTrain> {
    spec.validate()?;
    let period = 1000.0 / spec.intra_packet_hz;
    let mut times = vec![];
    let mut starts = vec![];
    if spec.packet_hz > 0.0 {
        // packet origins stay exact; only pulse times are rounded
        let packet_period = 1000.0 / spec.packet_hz;
        let mut j = 0u64;
        while (j as f64 * packet_period) < duration_ms as f64 {
            starts.push(j as f64 * packet_period);
            j += 1;
        }
    } else if duration_ms > 0 {
        starts.push(0.0);
    }
    for s in starts {
        grid_times(s, period, spec.packet_ms, duration_ms, &mut times);
    }
    times.dedup();
    Ok(PulseTrain::from_times(
        &times,
        &spec.channels,
        spec.amplitude_ma,
        spec.pulse_width_us,
        spec.shape,
    ))
}

/// Uniform train on the given channels. Rates above 1000 Hz cannot be
/// placed on the grid and are rejected.
pub fn continuous_pulse_train(
    rate_hz: f64,
    duration_ms: u64,
    amplitude_ma: f64,
    width_us: f64,
    shape: PulseShape,
    channels: &[usize],
) -> Result<PulseTrain> {
    if !(rate_hz > 0.0) || rate_hz > 1000.0 {
        return Err(Error::InvalidArgument(format!(
            "rate must lie in (0, 1000] Hz, got {rate_hz}"
        )));
    }
    check_pulse(amplitude_ma, width_us)?;
    let mut times = vec![];
    grid_times(0.0, 1000.0 / rate_hz, duration_ms as f64, duration_ms, &mut times);
    Ok(PulseTrain::from_times(&times, channels, amplitude_ma, width_us, shape))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FesParams {
    pub flexor_gain: f64,
    pub flexor_threshold_hz: f64,
    pub extensor_gain: f64,
    pub extensor_threshold_hz: f64,
    pub max_ma: f64,
}

impl Default for FesParams {
    fn default() -> Self {
        Self {
            flexor_gain: 0.8,
            flexor_threshold_hz: 24.0,
            extensor_gain: 0.6,
            extensor_threshold_hz: 12.0,
            max_ma: 10.0,
        }
    }
}

impl FesParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.flexor_gain >= 0.0 && self.extensor_gain >= 0.0 && self.max_ma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "FES gains must be >= 0 and max_ma > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `(flexor_ma, extensor_ma)` for one firing rate.
pub fn fes_currents(rate_hz: f64, p: &FesParams) -> (f64, f64) {
    let flexor = (p.flexor_gain * (rate_hz - p.flexor_threshold_hz).max(0.0)).min(p.max_ma);
    let extensor = (p.extensor_gain * (p.extensor_threshold_hz - rate_hz).max(0.0)).min(p.max_ma);
    (flexor, extensor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelCalibration {
    pub gain: f64,
    pub offset: f64,
    pub amp_max: f64,
}

/// `clamp(offset + gain·torque, 0, amp_max)` per channel.
pub fn torque_to_amplitude(torque: f64, calib: &[ChannelCalibration]) -> Result<Vec<f64>> {
    if !(torque >= 0.0) {
        return Err(Error::InvalidArgument(format!("torque must be >= 0, got {torque}")));
    }
    calib
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if !(c.gain >= 0.0 && c.amp_max >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "channel {i}: gain and amp_max must be >= 0"
                )));
            }
            Ok((c.offset + c.gain * torque).clamp(0.0, c.amp_max))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Record,
    Stimulate,
}

impl WindowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowKind::Record => "record",
            WindowKind::Stimulate => "stimulate",
        }
    }
}

/// Half-open window `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_ms: f64,
    pub end_ms: f64,
    pub kind: WindowKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub windows: Vec<Window>,
}

impl Schedule {
    pub fn kind_at(&self, t_ms: f64) -> Option<WindowKind> {
        let i = self.windows.partition_point(|w| w.end_ms <= t_ms);
        self.windows
            .get(i)
            .filter(|w| w.start_ms <= t_ms)
            .map(|w| w.kind)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("start_ms,end_ms,kind\n");
        for w in &self.windows {
            let _ = writeln!(s, "{},{},{}", w.start_ms, w.end_ms, w.kind.as_str());
        }
        s
    }
}

/// Alternating record/stimulate windows starting with record; the last
/// window is truncated at `duration_ms`.
pub fn interleave_schedule(duration_ms: f64, record_ms: f64, stim_ms: f64) -> Result<Schedule> {
    if !(record_ms > 0.0 && stim_ms > 0.0) || !(duration_ms >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "window lengths must be positive and duration >= 0, got {record_ms}, {stim_ms}, {duration_ms}"
        )));
    }
    let mut windows = vec![];
    let mut t = 0.0;
    let mut kind = WindowKind::Record;
    while t < duration_ms {
        let len = match kind {
            WindowKind::Record => record_ms,
            WindowKind::Stimulate => stim_ms,
        };
        let end = (t + len).min(duration_ms);
        windows.push(Window {
            start_ms: t,
            end_ms: end,
            kind,
        });
        t = end;
        kind = match kind {
            WindowKind::Record => WindowKind::Stimulate,
            WindowKind::Stimulate => WindowKind::Record,
        };
    }
    Ok(Schedule { windows })
}

pub const BLANK_MS_RANGE: (f64, f64) = (5.0, 10.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Blanked {
    /// One flag per input sample.
    pub valid: Vec<bool>,
    /// Merged closed intervals `[start, end]`.
    pub intervals: Vec<(f64, f64)>,
}

/// Marks samples with `p ≤ t ≤ p + blank_ms` invalid for every pulse time
/// `p`; a sample taken at the pulse itself carries the artifact too.
pub fn apply_blanking(sample_times_ms: &[f64], train: &PulseTrain, blank_ms: f64) -> Result<Blanked> {
    let (lo, hi) = BLANK_MS_RANGE;
    if !(blank_ms >= lo && blank_ms <= hi) {
        return Err(Error::InvalidArgument(format!(
            "blank_ms must lie in [{lo}, {hi}], got {blank_ms}"
        )));
    }
    let mut intervals: Vec<(f64, f64)> = vec![];
    for p in train.times() {
        let (s, e) = (p as f64, p as f64 + blank_ms);
        match intervals.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => intervals.push((s, e)),
        }
    }
    let valid = sample_times_ms
        .iter()
        .map(|&t| {
            let i = intervals.partition_point(|iv| iv.1 < t);
            intervals.get(i).is_none_or(|iv| !(iv.0 <= t && t <= iv.1))
        })
        .collect();
    Ok(Blanked { valid, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intervals(times: &[u64]) -> Vec<u64> {
        times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    #[test]
    fn rewarded_train_structure() {
        let t = packeted_pulse_train(&PulseTrainSpec::rewarded(), 1000).unwrap();
        let times = t.times();
        assert_eq!(times.len(), 100);
        for (j, packet) in times.chunks(10).enumerate() {
            assert_eq!(packet[0], 100 * j as u64);
            assert!(intervals(packet).iter().all(|&d| d == 5));
        }
    }

    #[test]
    fn unrewarded_train_alternates_three_and_two() {
        let t = packeted_pulse_train(&PulseTrainSpec::unrewarded(), 1000).unwrap();
        let times = t.times();
        assert_eq!(times.len(), 5 * 20);
        for (j, packet) in times.chunks(20).enumerate() {
            assert_eq!(packet[0], 200 * j as u64);
            let d = intervals(packet);
            assert!(d.iter().enumerate().all(|(i, &v)| v == if i % 2 == 0 { 3 } else { 2 }));
            assert_eq!(packet[19] - packet[0], 48);
        }
    }

    #[test]
    fn packeted_edge_cases() {
        assert!(packeted_pulse_train(&PulseTrainSpec::rewarded(), 0).unwrap().events.is_empty());
        let fast = PulseTrainSpec {
            intra_packet_hz: 1500.0,
            ..PulseTrainSpec::rewarded()
        };
        assert!(packeted_pulse_train(&fast, 100).is_err());
        let two = PulseTrainSpec {
            channels: vec![2, 0],
            ..PulseTrainSpec::rewarded()
        };
        let t = packeted_pulse_train(&two, 10).unwrap();
        let got: Vec<(u64, usize)> = t.events.iter().map(|e| (e.t_ms, e.channel)).collect();
        assert_eq!(got, vec![(0, 0), (0, 2), (5, 0), (5, 2)]);
    }

    #[test]
    fn continuous_train_counts() {
        let t = continuous_pulse_train(50.0, 1000, 1.0, 500.0, PulseShape::Monophasic, &[0]).unwrap();
        assert_eq!(t.times().len(), 50);
        assert!(intervals(&t.times()).iter().all(|&d| d == 20));
        let t = continuous_pulse_train(300.0, 1000, 1.0, 200.0, PulseShape::Biphasic, &[0]).unwrap();
        assert_eq!(t.times().len(), 300);
        let t = continuous_pulse_train(1.0, 500, 1.0, 200.0, PulseShape::Biphasic, &[0]).unwrap();
        assert_eq!(t.times(), vec![0]);
        assert!(continuous_pulse_train(1001.0, 10, 1.0, 1.0, PulseShape::Biphasic, &[0]).is_err());
    }

    #[test]
    fn fes_examples() {
        let p = FesParams::default();
        assert_eq!(fes_currents(24.0, &p).0, 0.0);
        assert_eq!(fes_currents(40.0, &p).0, 10.0);
        assert_eq!(fes_currents(0.0, &p), (0.0, 0.6 * 12.0));
        assert_eq!(fes_currents(30.0, &p), (0.8 * (30.0 - 24.0), 0.0));
    }

    #[test]
    fn torque_examples() {
        let c = |gain, offset, amp_max| ChannelCalibration { gain, offset, amp_max };
        assert_eq!(torque_to_amplitude(0.0, &[c(1.0, 0.0, 5.0)]).unwrap(), vec![0.0]);
        assert_eq!(torque_to_amplitude(3.0, &[c(2.0, 1.0, 10.0)]).unwrap(), vec![7.0]);
        assert_eq!(torque_to_amplitude(1e6, &[c(2.0, 1.0, 10.0)]).unwrap(), vec![10.0]);
        assert!(torque_to_amplitude(-1.0, &[]).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = interleave_schedule(200.0, 50.0, 50.0).unwrap();
        let got: Vec<(f64, f64, WindowKind)> = s.windows.iter().map(|w| (w.start_ms, w.end_ms, w.kind)).collect();
        use WindowKind::*;
        assert_eq!(
            got,
            vec![(0.0, 50.0, Record), (50.0, 100.0, Stimulate), (100.0, 150.0, Record), (150.0, 200.0, Stimulate)]
        );
        assert_eq!(interleave_schedule(50.0, 50.0, 50.0).unwrap().windows.len(), 1);
        let last = *interleave_schedule(130.0, 50.0, 50.0).unwrap().windows.last().unwrap();
        assert_eq!((last.start_ms, last.end_ms, last.kind), (100.0, 130.0, Record));
    }

    #[test]
    fn blanking_examples() {
        let times: Vec<f64> = (0..100).map(f64::from).collect();
        let train = |ts: &[u64]| PulseTrain::from_times(ts, &[0], 1.0, 1.0, PulseShape::Biphasic);
        let b = apply_blanking(&times, &train(&[60]), 10.0).unwrap();
        let invalid: Vec<usize> = (0..100).filter(|&i| !b.valid[i]).collect();
        assert_eq!(invalid, (60..=70).collect::<Vec<_>>());
        assert!(apply_blanking(&times, &PulseTrain::default(), 10.0).unwrap().valid.iter().all(|&v| v));
        let b = apply_blanking(&times, &train(&[60, 65]), 10.0).unwrap();
        assert_eq!(b.intervals, vec![(60.0, 75.0)]);
        assert!(apply_blanking(&times, &train(&[1]), 4.0).is_err());
        assert!(apply_blanking(&times, &train(&[1]), 11.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let t = continuous_pulse_train(500.0, 4, 1.5, 200.0, PulseShape::Biphasic, &[1]).unwrap();
        assert_eq!(t.to_csv(), "t_ms,channel,amplitude_ma,width_us,shape\n0,1,1.5,200,biphasic\n2,1,1.5,200,biphasic\n");
    }

    proptest! {
        #[test]
        fn continuous_rate_is_accurate(rate in 0.5f64..1000.0, dur in 1u64..5000) {
            let t = continuous_pulse_train(rate, dur, 1.0, 1.0, PulseShape::Biphasic, &[0]).unwrap();
            let times = t.times();
            let expected = rate * dur as f64 / 1000.0;
            prop_assert!((times.len() as f64 - expected).abs() <= 1.0);
            prop_assert!(times.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(times.iter().all(|&x| x < dur));
        }

        #[test]
        fn fes_bounded_and_exclusive(rate in 0.0f64..500.0) {
            let p = FesParams::default();
            let (f, e) = fes_currents(rate, &p);
            prop_assert!((0.0..=p.max_ma).contains(&f) && (0.0..=p.max_ma).contains(&e));
            prop_assert!(f == 0.0 || e == 0.0);
        }

        #[test]
        fn restricted_trains_fall_in_stimulate_windows(rate in 1.0f64..1000.0, dur in 1u64..2000) {
            let s = interleave_schedule(dur as f64, 50.0, 50.0).unwrap();
            let t = continuous_pulse_train(rate, dur, 1.0, 1.0, PulseShape::Biphasic, &[0, 1]).unwrap();
            for e in t.restrict_to(&s).events {
                let w = s.windows.iter().find(|w| w.start_ms <= e.t_ms as f64 && (e.t_ms as f64) < w.end_ms).unwrap();
                prop_assert_eq!(w.kind, WindowKind::Stimulate);
            }
        }
    }
}
