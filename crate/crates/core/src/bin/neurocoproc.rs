use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use neurocoproc::bench::{grad_check_suite, run_eval, run_experiment, ExperimentConfig, Manifest, Scenario};
use neurocoproc::Error;

/// Closed-loop brain-computer-interface simulation experiments.
#[derive(Parser)]
#[command(name = "neurocoproc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario named in the config.
    Run { config: PathBuf },
    /// Check backpropagated gradients against finite differences.
    GradCheck,
    /// Decoder accuracy suite.
    DecodeBench { config: PathBuf },
    /// Pulse trains, schedules, blanking and FES currents.
    EncodeDemo { config: PathBuf },
    /// Triggered conditioning against its shuffled-timing control.
    PlasticityDemo { config: PathBuf },
    /// Train the emulator network.
    TrainEmulator { config: PathBuf },
    /// Train the emulator, then the co-processor through it, and evaluate.
    TrainNcp { config: PathBuf },
    /// Re-evaluate saved co-processor checkpoints.
    Eval { config: PathBuf },
    /// Train and evaluate, then run co-adaptation sessions with plasticity.
    Coadapt { config: PathBuf },
}

fn report(m: &Manifest, dir: &std::path::Path) {
    println!("wrote {} files to {}", m.entries.len() + 1, dir.display());
}

fn scenario_run(config: &PathBuf, forced: Option<Scenario>) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(config)?;
    let scenario = match forced {
        Some(s) => s,
        None => cfg.scenario()?,
    };
    let m = run_experiment(&cfg, scenario)?;
    report(&m, &cfg.output_dir);
    Ok(())
}

fn grad_check() -> Result<bool, Error> {
    let rows = grad_check_suite()?;
    let mut ok = true;
    println!("{:<24} {:>7} {:>12}  result", "network", "params", "max_rel_err");
    for r in &rows {
        ok &= r.passed();
        println!(
            "{:<24} {:>7} {:>12.3e}  {}",
            r.name,
            r.params,
            r.max_rel_error,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => scenario_run(config, None),
        Command::DecodeBench { config } => scenario_run(config, Some(Scenario::CodecBench)),
        Command::EncodeDemo { config } => scenario_run(config, Some(Scenario::EncodeDemo)),
        Command::PlasticityDemo { config } => scenario_run(config, Some(Scenario::PlasticityDemo)),
        Command::TrainEmulator { config } => scenario_run(config, Some(Scenario::Emulator)),
        Command::TrainNcp { config } => scenario_run(config, Some(Scenario::Ncp)),
        Command::Coadapt { config } => scenario_run(config, Some(Scenario::Coadapt)),
        Command::Eval { config } => ExperimentConfig::load(config).and_then(|cfg| {
            let m = run_eval(&cfg)?;
            report(&m, &cfg.output_dir);
            Ok(())
        }),
        Command::GradCheck => match grad_check() {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error[grad_check]: gradient error above tolerance");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
