//! Scalar-signal controllers: operant rate threshold and band-power drop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Baselines at or below this power never trigger.
pub const POWER_FLOOR: f64 = 1e-12;

/// `gain · max(0, rate − threshold)` per bin.
pub fn rate_threshold_decode<T: Scalar>(rate_trace: &[T], threshold: T, gain: T) -> Result<Vec<T>> {
    if !(gain >= T::zero()) {
        return Err(Error::InvalidArgument(format!("gain must be non-negative, got {gain}")));
    }
    Ok(rate_trace.iter().map(|&r| gain * (r - threshold).max(T::zero())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandPowerSpec {
    pub fs_hz: f64,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub window_ms: f64,
    pub drop_ratio: f64,
    /// Trailing windows in the median baseline.
    pub baseline_windows: usize,
}

impl Default for BandPowerSpec {
    fn default() -> Self {
        Self {
            fs_hz: 1000.0,
            lo_hz: 8.0,
            hi_hz: 12.0,
            window_ms: 500.0,
            drop_ratio: 0.5,
            baseline_windows: 8,
        }
    }
}

impl BandPowerSpec {
    /// Samples per window.
    pub fn window_samples(&self) -> usize {
        (self.window_ms * 1e-3 * self.fs_hz).round() as usize
    }

    /// DFT bin indices whose frequency lies in `[lo, hi]`.
    fn band_bins(&self) -> Vec<usize> {
        let n = self.window_samples();
        (1..=n / 2)
            .filter(|&k| {
                let f = k as f64 * self.fs_hz / n as f64;
                f >= self.lo_hz - 1e-9 && f <= self.hi_hz + 1e-9
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.fs_hz > 0.0) {
            return bad(format!("fs must be positive, got {}", self.fs_hz));
        }
        if !(0.0 < self.lo_hz && self.lo_hz < self.hi_hz && self.hi_hz < self.fs_hz / 2.0) {
            return bad(format!(
                "band ({}, {}) Hz must satisfy 0 < lo < hi < fs/2 = {}",
                self.lo_hz,
                self.hi_hz,
                self.fs_hz / 2.0
            ));
        }
        if self.window_ms * 1e-3 * self.lo_hz < 2.0 - 1e-9 {
            return bad(format!(
                "window of {} ms covers fewer than 2 cycles of {} Hz",
                self.window_ms, self.lo_hz
            ));
        }
        if !(self.drop_ratio > 0.0 && self.drop_ratio < 1.0) {
            return bad(format!("drop_ratio must lie in (0, 1), got {}", self.drop_ratio));
        }
        if self.baseline_windows == 0 {
            return bad("baseline_windows must be at least 1".into());
        }
        if self.band_bins().is_empty() {
            return bad(format!(
                "no DFT bins fall in ({}, {}) Hz at {} samples per window",
                self.lo_hz,
                self.hi_hz,
                self.window_samples()
            ));
        }
        Ok(())
    }
}

/// Band power of each complete non-overlapping window (rectangular window,
/// `Σ_k |X_k|² / N²` over in-band bins).
pub fn band_powers(signal: &[f64], spec: &BandPowerSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.window_samples();
    let bins = spec.band_bins();
    let nf = n as f64;
    Ok(signal
        .chunks_exact(n)
        .map(|w| {
            bins.iter()
                .map(|&k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (t, &x) in w.iter().enumerate() {
                        let ph = std::f64::consts::TAU * (k * t) as f64 / nf;
                        re += x * ph.cos();
                        im -= x * ph.sin();
                    }
                    (re * re + im * im) / (nf * nf)
                })
                .sum()
        })
        .collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Window indices whose band power falls below `drop_ratio` times the
/// median of the preceding `baseline_windows` windows. The first window
/// never triggers; earlier windows use whatever history exists.
pub fn band_power_trigger(signal: &[f64], spec: &BandPowerSpec) -> Result<Vec<usize>> {
    let p = band_powers(signal, spec)?;
    let mut out = vec![];
    for i in 1..p.len() {
        let lo = i.saturating_sub(spec.baseline_windows);
        let base = median(&mut p[lo..i].to_vec());
        if base > POWER_FLOOR && p[i] < spec.drop_ratio * base {
            out.push(i);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(fs: f64, f: f64, secs: f64, amp: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = (fs * secs) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                amp(t) * (std::f64::consts::TAU * f * t).sin()
            })
            .collect()
    }

    #[test]
    fn rate_threshold_examples() {
        assert_eq!(rate_threshold_decode(&[1.0, 10.0, 23.9], 24.0, 0.8).unwrap(), vec![0.0; 3]);
        assert_eq!(rate_threshold_decode(&[24.0], 24.0, 0.8).unwrap(), vec![0.0]);
        let v: f64 = rate_threshold_decode(&[30.0], 24.0, 0.8).unwrap()[0];
        assert!((v - 0.8 * 6.0).abs() < 1e-12);
        assert!(rate_threshold_decode(&[1.0], 0.0, -1.0).is_err());
    }

    #[test]
    fn sinusoid_power_matches_dft_oracle() {
        // A sin on an exact bin has |X_k| = A N / 2, so band power is A²/4
        let spec = BandPowerSpec::default();
        let p = band_powers(&sine(1000.0, 10.0, 1.0, |_| 2.0), &spec).unwrap();
        assert_eq!(p.len(), 2);
        for v in p {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn halving_amplitude_fires_after_the_drop() {
        let spec = BandPowerSpec::default();
        let sig = sine(1000.0, 10.0, 6.0, |t| if t < 3.0 { 1.0 } else { 0.5 });
        let p = band_powers(&sig, &spec).unwrap();
        assert!((p[5] / p[6] - 4.0).abs() < 1e-9);
        let trig = band_power_trigger(&sig, &spec).unwrap();
        assert_eq!(trig.first(), Some(&6));
        assert!(trig.iter().all(|&w| w >= 6));
    }

    #[test]
    fn constant_and_stationary_signals_never_fire() {
        let spec = BandPowerSpec::default();
        assert!(band_power_trigger(&vec![3.0; 5000], &spec).unwrap().is_empty());
        assert!(band_power_trigger(&vec![0.0; 5000], &spec).unwrap().is_empty());
        let sig = sine(1000.0, 10.0, 5.0, |_| 1.0);
        assert!(band_power_trigger(&sig, &spec).unwrap().is_empty());
    }

    #[test]
    fn degenerate_windows_are_errors() {
        let short = BandPowerSpec {
            window_ms: 200.0,
            ..Default::default()
        };
        assert!(short.validate().is_err());
        let inverted = BandPowerSpec {
            lo_hz: 12.0,
            hi_hz: 8.0,
            ..Default::default()
        };
        assert!(inverted.validate().is_err());
        let narrow = BandPowerSpec {
            lo_hz: 9.1,
            hi_hz: 9.2,
            ..Default::default()
        };
        assert!(narrow.validate().unwrap_err().to_string().contains("no DFT bins"));
    }
}
