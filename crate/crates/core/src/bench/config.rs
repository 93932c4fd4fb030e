//! Experiment configuration (TOML). Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brainsim::{BrainParams, PlasticityParams};
use crate::codec::BandPowerSpec;
use crate::coproc::{CoprocConfig, EmulatorTraining, NcpTraining, StimSamplerSpec, TaskDistribution};
use crate::error::{Error, Result};
use crate::plasticity::{conditioning_brain_params, conditioning_plasticity, BackgroundDrive, ConditioningProtocol};
use crate::stimcode::{ChannelCalibration, FesParams, PulseShape, PulseTrainSpec};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "NEUROCOPROC_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    CodecBench,
    EncodeDemo,
    PlasticityDemo,
    Emulator,
    Ncp,
    Coadapt,
    FullPipeline,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::CodecBench => "codec_bench",
            Scenario::EncodeDemo => "encode_demo",
            Scenario::PlasticityDemo => "plasticity_demo",
            Scenario::Emulator => "emulator",
            Scenario::Ncp => "ncp",
            Scenario::Coadapt => "coadapt",
            Scenario::FullPipeline => "full_pipeline",
        }
    }

    /// Config tables the scenario reads.
    pub fn required_blocks(self) -> &'static [&'static str] {
        const TRAINING: [&str; 5] = ["brain", "coproc", "dataset", "emulator", "lesion"];
        match self {
            Scenario::CodecBench => &["codec"],
            Scenario::EncodeDemo => &["encode"],
            Scenario::PlasticityDemo => &["plasticity_demo"],
            Scenario::Emulator => &TRAINING,
            Scenario::Ncp => &["brain", "coproc", "dataset", "emulator", "lesion", "ncp", "eval"],
            Scenario::Coadapt => &["brain", "coproc", "dataset", "emulator", "lesion", "ncp", "eval", "coadapt"],
            Scenario::FullPipeline => &[
                "brain",
                "coproc",
                "dataset",
                "emulator",
                "lesion",
                "ncp",
                "eval",
                "coadapt",
                "codec",
                "encode",
                "plasticity_demo",
            ],
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LesionBlock {
    /// Fraction of A→B pathway entries zeroed.
    pub fraction: f64,
}

impl Default for LesionBlock {
    fn default() -> Self {
        Self { fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecBlock {
    /// Samples of the synthetic kinematic system (half train, half test).
    pub kalman_samples: usize,
    /// Velocity damping per step of the synthetic kinematics.
    pub kalman_damping: f64,
    pub kalman_dt_s: f64,
    pub kalman_obs_dim: usize,
    /// Class separation in units of the within-class standard deviation.
    pub separation_sigma: f64,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub rate_threshold_hz: f64,
    pub rate_gain: f64,
    pub band: BandPowerSpec,
}

impl Default for CodecBlock {
    fn default() -> Self {
        Self {
            kalman_samples: 4000,
            kalman_damping: 0.95,
            kalman_dt_s: 0.02,
            kalman_obs_dim: 8,
            separation_sigma: 4.0,
            feature_dim: 4,
            samples_per_class: 500,
            rate_threshold_hz: 24.0,
            rate_gain: 0.8,
            band: BandPowerSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeBlock {
    pub duration_ms: u64,
    pub rewarded: PulseTrainSpec,
    pub unrewarded: PulseTrainSpec,
    pub continuous_hz: f64,
    pub continuous_amplitude_ma: f64,
    pub continuous_width_us: f64,
    pub continuous_shape: PulseShape,
    pub record_ms: f64,
    pub stim_ms: f64,
    pub blank_ms: f64,
    /// Length of the synthetic session used for the blanking check.
    pub session_ms: u64,
    pub fes: FesParams,
    pub fes_rates_hz: Vec<f64>,
    pub torque_calibration: Vec<ChannelCalibration>,
    pub torques: Vec<f64>,
}

impl Default for EncodeBlock {
    fn default() -> Self {
        Self {
            duration_ms: 1000,
            rewarded: PulseTrainSpec::rewarded(),
            unrewarded: PulseTrainSpec::unrewarded(),
            continuous_hz: 50.0,
            continuous_amplitude_ma: 20.0,
            continuous_width_us: 500.0,
            continuous_shape: PulseShape::Monophasic,
            record_ms: 50.0,
            stim_ms: 50.0,
            blank_ms: 10.0,
            session_ms: 10_000,
            fes: FesParams::default(),
            fes_rates_hz: vec![0.0, 12.0, 24.0, 30.0, 40.0, 100.0],
            torque_calibration: vec![ChannelCalibration {
                gain: 2.0,
                offset: 1.0,
                amp_max: 10.0,
            }],
            torques: vec![0.0, 1.0, 3.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlasticityDemoBlock {
    pub brain: BrainParams,
    pub protocol: ConditioningProtocol,
    pub plasticity: PlasticityParams,
    pub background: BackgroundDrive,
}

impl Default for PlasticityDemoBlock {
    fn default() -> Self {
        Self {
            brain: conditioning_brain_params(),
            protocol: ConditioningProtocol::default(),
            plasticity: conditioning_plasticity(),
            background: BackgroundDrive::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetBlock {
    pub trials: usize,
    pub trial_bins: usize,
    pub sampler: StimSamplerSpec,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self {
            trials: 300,
            trial_bins: 100,
            sampler: StimSamplerSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NcpBlock {
    pub training: NcpTraining,
    pub tasks: TaskDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    /// Radial targets evenly spaced on a circle.
    pub targets: usize,
    pub radius: f64,
    pub duration_ms: f64,
    pub success_radius: f64,
    /// Model checkpoint for the `eval` command; `{seed}` is replaced by the
    /// run seed.
    pub checkpoint: Option<String>,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            targets: 8,
            radius: 1.0,
            duration_ms: 1000.0,
            success_radius: 0.2,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoadaptBlock {
    pub sessions: usize,
    pub plasticity: PlasticityParams,
}

impl Default for CoadaptBlock {
    fn default() -> Self {
        Self {
            sessions: 20,
            plasticity: PlasticityParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required by `run`; the dedicated subcommands set it themselves.
    pub scenario: Option<Scenario>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub brain: Option<BrainParams>,
    pub lesion: Option<LesionBlock>,
    pub coproc: Option<CoprocConfig>,
    pub dataset: Option<DatasetBlock>,
    pub emulator: Option<EmulatorTraining>,
    pub ncp: Option<NcpBlock>,
    pub eval: Option<EvalBlock>,
    pub coadapt: Option<CoadaptBlock>,
    pub codec: Option<CodecBlock>,
    pub encode: Option<EncodeBlock>,
    pub plasticity_demo: Option<PlasticityDemoBlock>,
}

fn missing(block: &str, what: &str) -> Error {
    Error::Config(format!("missing [{block}] table required by {what}"))
}

macro_rules! block_getter {
    ($name:ident, $ty:ty) => {
        pub fn $name(&self) -> Result<&$ty> {
            self.$name.as_ref().ok_or_else(|| missing(stringify!($name), "this run"))
        }
    };
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Reads `path` and applies the output-directory override from the
    /// environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    fn has_block(&self, name: &str) -> bool {
        match name {
            "brain" => self.brain.is_some(),
            "lesion" => self.lesion.is_some(),
            "coproc" => self.coproc.is_some(),
            "dataset" => self.dataset.is_some(),
            "emulator" => self.emulator.is_some(),
            "ncp" => self.ncp.is_some(),
            "eval" => self.eval.is_some(),
            "coadapt" => self.coadapt.is_some(),
            "codec" => self.codec.is_some(),
            "encode" => self.encode.is_some(),
            "plasticity_demo" => self.plasticity_demo.is_some(),
            _ => false,
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario
            .ok_or_else(|| Error::Config("missing top-level key `scenario`".into()))
    }

    /// Checks seeds and that every table `blocks` names is present.
    pub fn require(&self, blocks: &[&str], what: &str) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("`seeds` contains duplicates".into()));
        }
        if let Some(b) = blocks.iter().find(|b| !self.has_block(b)) {
            return Err(missing(b, what));
        }
        Ok(())
    }

    pub fn validate_for(&self, scenario: Scenario) -> Result<()> {
        self.require(scenario.required_blocks(), &format!("scenario {scenario}"))
    }

    block_getter!(brain, BrainParams);
    block_getter!(lesion, LesionBlock);
    block_getter!(coproc, CoprocConfig);
    block_getter!(dataset, DatasetBlock);
    block_getter!(emulator, EmulatorTraining);
    block_getter!(ncp, NcpBlock);
    block_getter!(eval, EvalBlock);
    block_getter!(coadapt, CoadaptBlock);
    block_getter!(codec, CodecBlock);
    block_getter!(encode, EncodeBlock);
    block_getter!(plasticity_demo, PlasticityDemoBlock);
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scenario = "encode_demo"
seeds = [0]
output_dir = "out"
[encode]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.scenario().unwrap(), Scenario::EncodeDemo);
        assert_eq!(c.encode().unwrap(), &EncodeBlock::default());
        c.validate_for(Scenario::EncodeDemo).unwrap();
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::parse(&MINIMAL.replace("[encode]", "[encode]\nduraton_ms = 5")).unwrap_err();
        assert!(err.to_string().contains("duraton_ms"), "{err}");
        let err = ExperimentConfig::parse(&format!("{MINIMAL}\n[brian]\n")).unwrap_err();
        assert!(err.to_string().contains("brian"), "{err}");
        let err = ExperimentConfig::parse(&format!("{MINIMAL}\n[ncp.training]\nsesions = 3\n")).unwrap_err();
        assert!(err.to_string().contains("sesions"), "{err}");
    }

    #[test]
    fn missing_block_is_named() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let err = c.validate_for(Scenario::Ncp).unwrap_err();
        assert!(err.to_string().contains("[brain]"), "{err}");
    }

    #[test]
    fn seeds_must_be_unique() {
        let c = ExperimentConfig::parse(&MINIMAL.replace("[0]", "[1, 1]")).unwrap();
        assert!(c.validate_for(Scenario::EncodeDemo).is_err());
    }
}
