//! Closed-loop bidirectional brain-computer-interface simulation toolkit.
//!
//! * [`diffnet`]: dense/recurrent networks with backpropagation through time
//! * [`brainsim`]: two-region rate-network substrate with lesion and Hebbian plasticity
//! * [`codec`]: Kalman, LDA, multiclass, rate-threshold and band-power decoders
//! * [`stimcode`]: pulse trains, FES current laws, interleaving and blanking
//! * [`plasticity`]: spike-triggered conditioning protocols
//! * [`coproc`]: emulator network training and co-processor training through it
//! * [`bench`]: configuration, experiment orchestration, metrics and manifests
//!
//! Numeric building blocks are generic over [`Scalar`]; the aliases below fix
//! the precision used by the simulation layers.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod bench;
pub mod brainsim;
pub mod checkpoint;
pub mod codec;
pub mod coproc;
pub mod diffnet;
pub mod error;
pub mod linalg;
pub mod plasticity;
pub mod scalar;
pub mod seeds;
pub mod stimcode;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type NetParams = diffnet::NetParams<f64>;
pub type NetParams32 = diffnet::NetParams<f32>;
pub type GradSet = diffnet::GradSet<f64>;
pub type OptState = diffnet::OptState<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
