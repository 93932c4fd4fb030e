//! Fixed gradient-check suite behind the `grad-check` command.

use rand::Rng;

use crate::brainsim::BrainConfig;
use crate::coproc::{CoprocConfig, CoprocModel, LossWeights};
use crate::diffnet::gradcheck::grad_check_with;
use crate::diffnet::{grad_check, Activation, LossSpec, NetBuilder};
use crate::error::Result;
use crate::seeds::rng_for;

/// Largest tolerated relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub name: String,
    pub params: usize,
    pub max_rel_error: f64,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

fn activation(i: usize) -> Activation<f64> {
    match i % 4 {
        0 => Activation::Tanh,
        1 => Activation::BoundedSigmoid { scale: 2.0 },
        2 => Activation::Identity,
        _ => Activation::Tanh,
    }
}

/// One network of the suite: even indices are dense, odd ones recurrent.
fn seeded_case(i: usize) -> Result<GradCheckRow> {
    let mut rng = rng_for(i as u64, "grad-check-net");
    let input = 2 + i % 4;
    let hidden = 3 + 5 * i;
    let output = 1 + i % 3;
    let recurrent = i % 2 == 1;
    let b = NetBuilder::new(input);
    let b = if recurrent {
        b.recurrent("h", hidden, activation(i))
    } else {
        b.dense("h", hidden, activation(i))
    };
    let net = b.dense("out", output, activation(i + 1)).build(&mut rng)?;
    let steps = 4 + i % 3;
    let xs: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..output).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let err = grad_check(&net, &xs, None, &LossSpec::SquaredError { targets })?;
    Ok(GradCheckRow {
        name: format!("{}_{i}", if recurrent { "recurrent" } else { "dense" }),
        params: net.param_count(),
        max_rel_error: err,
    })
}

/// Gradient of the behavioural loss through the frozen emulator with
/// respect to the co-processor parameters, on the desk-scale shapes.
fn chained_case(seed: u64) -> Result<GradCheckRow> {
    let cfg = BrainConfig::desk_scale();
    let mut rng = rng_for(seed, "grad-check-chain");
    let mut model = CoprocModel::init(&cfg, &CoprocConfig::default(), &mut rng)?;
    model.freeze_emulator();
    let inputs: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..cfg.n_a).map(|_| rng.random_range(0.0..0.6)).collect())
        .collect();
    let context: Vec<f64> = (0..cfg.n_a).map(|_| rng.random_range(0.0..60.0)).collect();
    let target = [0.8, -0.3];
    let w = LossWeights::default();
    let (_, analytic) = model.ncp_objective(&model.ncp, &inputs, &context, target, &w)?;
    let err = grad_check_with(&model.ncp, &analytic, |p| {
        Ok(model.ncp_objective(p, &inputs, &context, target, &w)?.0.total)
    })?;
    model.check_frozen()?;
    Ok(GradCheckRow {
        name: "ncp_through_frozen_en".into(),
        params: model.ncp.param_count(),
        max_rel_error: err,
    })
}

/// Ten seeded dense and recurrent networks plus the chained co-processor
/// path.
pub fn grad_check_suite() -> Result<Vec<GradCheckRow>> {
    let mut rows = (0..10).map(seeded_case).collect::<Result<Vec<_>>>()?;
    rows.push(chained_case(0)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_shapes_stay_within_limits() {
        for i in 0..10 {
            let row = seeded_case(i).unwrap();
            assert!(row.params <= crate::diffnet::gradcheck::MAX_CHECK_PARAMS);
            assert!(row.passed(), "{row:?}");
        }
    }
}
