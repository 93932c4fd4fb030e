//! Decoders: a Kalman kinematic filter, binary LDA, one-vs-rest linear
//! multiclass decoding, a rate-threshold controller and a band-power drop
//! trigger. All are pure functions over immutable models.

pub mod classify;
pub mod kalman;
pub mod signal;
pub mod synth;

pub use classify::{argmax, lda_fit, multiclass_fit, multiclass_predict, LdaModel, MulticlassModel, MulticlassOptions};
pub use kalman::{kalman_fit, kalman_step, KalmanBelief, KalmanModel};
pub use signal::{band_power_trigger, band_powers, rate_threshold_decode, BandPowerSpec, POWER_FLOOR};
