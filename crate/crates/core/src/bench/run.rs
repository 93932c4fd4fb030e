//! Experiment orchestration, summaries and manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{sha256_hex, Checkpoint};
use crate::coproc::{closed_loop_eval, matched_random_amplitude, CoprocModel, PolicyMode};
use crate::error::{Error, Result};
use crate::seeds::sub_seed;

use super::config::{ExperimentConfig, Scenario};
use super::metrics::{emit_metrics, format_value, MetricsRow};
use super::stages::{
    codec_stage, coproc_stage, encode_stage, eval_tasks, lesioned_brain, plasticity_stage, record_comparison,
    CoprocDepth, PolicyComparison, SeedOutput,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn paths(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.path.as_str()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}  {}", e.sha256, e.path);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = vec![];
        for (i, line) in text.lines().enumerate() {
            let (sha256, path) = line.split_once("  ").ok_or_else(|| {
                Error::InvalidArgument(format!("manifest line {} is not `<digest>  <path>`", i + 1))
            })?;
            entries.push(ManifestEntry {
                path: path.into(),
                sha256: sha256.into(),
            });
        }
        Ok(Self { entries })
    }
}

/// Removes the files of a previous run (as listed by its manifest) and
/// refuses directories holding anything else.
fn prepare_output_dir(dir: &Path) -> Result<()> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        for e in Manifest::parse(&text)?.entries {
            let p = dir.join(&e.path);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|err| Error::io(&p, err))?;
            }
        }
        std::fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
        remove_empty_dirs(dir)?;
    }
    if dir.exists() {
        let leftover = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if leftover {
            return Err(Error::Config(format!(
                "output_dir {} is not empty and holds files from no known run",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn remove_empty_dirs(dir: &Path) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            remove_empty_dirs(&p)?;
            let empty = std::fs::read_dir(&p).map_err(|e| Error::io(&p, e))?.next().is_none();
            if empty {
                std::fs::remove_dir(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    Ok(())
}

fn write_manifest(dir: &Path, mut files: Vec<String>) -> Result<Manifest> {
    files.sort();
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let p = dir.join(&f);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        entries.push(ManifestEntry {
            path: f,
            sha256: sha256_hex(&bytes),
        });
    }
    let m = Manifest { entries };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, m.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(m)
}

/// Mean, min and max of every (condition, metric) across seeds.
pub fn summary_text(label: &str, seeds: &[u64], rows: &[MetricsRow]) -> String {
    let mut groups: BTreeMap<(&str, &str), (Vec<f64>, &str)> = BTreeMap::new();
    for r in rows {
        groups
            .entry((&r.condition, &r.metric))
            .or_insert_with(|| (vec![], &r.units))
            .0
            .push(r.value);
    }
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut s = format!("scenario {label}\nseeds {}\n", seeds.join(" "));
    for ((cond, metric), (vals, units)) in groups {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            s,
            "{cond}/{metric} mean={} min={} max={} n={} units={units}",
            format_value(mean),
            format_value(min),
            format_value(max),
            vals.len()
        );
    }
    s
}

/// Runs `job` for every seed on its own thread and returns outputs in seed
/// order; the first failing seed (in config order) determines the error.
fn per_seed<F>(cfg: &ExperimentConfig, dir: &Path, label: &str, job: F) -> Result<Vec<SeedOutput>>
where
    F: Fn(u64, &mut SeedOutput) -> Result<()> + Sync,
{
    let results: Vec<Result<SeedOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let job = &job;
                s.spawn(move || -> Result<SeedOutput> {
                    let mut out = SeedOutput::new(dir, label, seed)?;
                    job(seed, &mut out)?;
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("worker thread panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

fn finish(dir: &Path, label: &str, cfg: &ExperimentConfig, outputs: Vec<SeedOutput>) -> Result<Manifest> {
    let mut files = vec![METRICS_FILE.to_string(), SUMMARY_FILE.to_string()];
    let mut rows = vec![];
    for o in outputs {
        files.extend(o.files);
        rows.extend(o.metrics.rows);
    }
    emit_metrics(&rows, dir.join(METRICS_FILE))?;
    let summary = dir.join(SUMMARY_FILE);
    std::fs::write(&summary, summary_text(label, &cfg.seeds, &rows)).map_err(|e| Error::io(&summary, e))?;
    write_manifest(dir, files)
}

/// Runs `scenario` for every seed in `cfg` and writes metrics, summary,
/// per-seed files and the manifest into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, scenario: Scenario) -> Result<Manifest> {
    cfg.validate_for(scenario)?;
    let dir = cfg.output_dir.clone();
    prepare_output_dir(&dir)?;
    let label = scenario.as_str();
    let outputs = per_seed(cfg, &dir, label, |seed, out| {
        use Scenario::*;
        if matches!(scenario, CodecBench | FullPipeline) {
            codec_stage(cfg.codec()?, seed, out)?;
        }
        if matches!(scenario, EncodeDemo | FullPipeline) {
            encode_stage(cfg.encode()?, out)?;
        }
        if matches!(scenario, PlasticityDemo | FullPipeline) {
            plasticity_stage(cfg.plasticity_demo()?, seed, out)?;
        }
        let depth = match scenario {
            Emulator => Some(CoprocDepth::Emulator),
            Ncp => Some(CoprocDepth::Ncp),
            Coadapt | FullPipeline => Some(CoprocDepth::Coadapt),
            _ => None,
        };
        if let Some(d) = depth {
            coproc_stage(cfg, seed, d, out)?;
        }
        Ok(())
    })?;
    finish(&dir, label, cfg, outputs)
}

/// Checkpoint path for `seed` from the `[eval]` template.
pub fn eval_checkpoint_path(template: &str, seed: u64) -> PathBuf {
    PathBuf::from(template.replace("{seed}", &seed.to_string()))
}

/// Re-evaluates saved co-processor checkpoints (`[eval] checkpoint`) against
/// zero and matched random stimulation on each seed's lesioned brain.
pub fn run_eval(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.require(&["brain", "lesion", "eval"], "the eval command")?;
    let template = cfg
        .eval()?
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("[eval] needs `checkpoint` for the eval command".into()))?;
    // load everything up front so a bad path fails before any output is written
    let mut models = BTreeMap::new();
    for &seed in &cfg.seeds {
        let path = eval_checkpoint_path(&template, seed);
        let model = CoprocModel::from_checkpoint(&Checkpoint::load(&path)?)?;
        models.insert(seed, model);
    }
    let dir = cfg.output_dir.clone();
    prepare_output_dir(&dir)?;
    let outputs = per_seed(cfg, &dir, "eval", |seed, out| {
        let brain = lesioned_brain(cfg.brain()?, cfg.lesion()?, seed)?;
        let model = &models[&seed];
        let tasks = eval_tasks(cfg.eval()?);
        let es = sub_seed(seed, "eval");
        let ncp = closed_loop_eval(&brain, es, &tasks, PolicyMode::Ncp(model))?;
        let zero_stim = closed_loop_eval(&brain, es, &tasks, PolicyMode::ZeroStim)?;
        let random_amplitude = matched_random_amplitude(ncp.mean_stim_energy, model.stim_channels(), model.s_max);
        let random_stim = closed_loop_eval(&brain, es, &tasks, PolicyMode::RandomStim { amplitude: random_amplitude })?;
        record_comparison(
            out,
            &PolicyComparison {
                ncp,
                zero_stim,
                random_stim,
                random_amplitude,
            },
        );
        Ok(())
    })?;
    finish(&dir, "eval", cfg, outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_text_round_trip() {
        let m = Manifest {
            entries: vec![ManifestEntry {
                path: "seed_0/a b.csv".into(),
                sha256: "ab".repeat(32),
            }],
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn foreign_files_block_the_output_dir() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("notes.txt"), "x").unwrap();
        assert!(prepare_output_dir(tmp.path()).is_err());
    }

    #[test]
    fn previous_run_is_cleared() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        std::fs::create_dir(d.join("seed_1")).unwrap();
        std::fs::write(d.join("seed_1/x.csv"), "1").unwrap();
        write_manifest(d, vec!["seed_1/x.csv".into()]).unwrap();
        prepare_output_dir(d).unwrap();
        assert!(std::fs::read_dir(d).unwrap().next().is_none());
    }
}
