//! Experiment configs, sweeps and their outputs.

pub mod config;
pub mod plot;
pub mod summary;
pub mod trace;
pub mod verify;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{ols_pooled, run_dsgd_rer, run_vanilla_dsgd, BufferLayout};
use crate::lti::LtiSystem;
use crate::diagnostics::error_metric;

pub use config::{Algorithm, ExperimentConfig, Job};
pub use trace::{ErrorTrace, TraceRow};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone)]
pub struct JobOutput {
    pub job: Job,
    pub trace: ErrorTrace,
    pub step_sizes: Vec<f64>,
}

/// Runs one sweep entry end to end on the calling thread.
pub fn run_job(cfg: &ExperimentConfig, system: &LtiSystem, layout: &BufferLayout, job: &Job) -> Result<JobOutput> {
    let opts = cfg.run_options();
    let policy = cfg.run.step_size.policy();
    let topology = job.topology.build(job.agents)?;
    let (mut trace, step_sizes) = match job.algorithm {
        Algorithm::DsgdRer => {
            let out = run_dsgd_rer(system, &topology, layout, policy, job.seed, &opts)?;
            (out.trace, out.step_sizes)
        }
        Algorithm::VanillaDsgd => {
            let out = run_vanilla_dsgd(system, &topology, layout.horizon(), policy, job.seed, layout.block(), &opts)?;
            (out.trace, out.step_sizes)
        }
        Algorithm::PooledOls => {
            let estimate = ols_pooled(system, job.agents, layout.horizon(), job.seed, &opts)?;
            let mut trace = ErrorTrace::new("ols");
            trace.rows.push(TraceRow {
                buffer: 0,
                samples: layout.horizon(),
                agent: 0,
                error: error_metric(&estimate, system.a())?,
            });
            (trace, Vec::new())
        }
    };
    trace.algo = job.tag();
    trace.seed = job.seed;
    trace.config_hash = cfg.hash();
    Ok(JobOutput {
        job: job.clone(),
        trace,
        step_sizes,
    })
}

/// Runs every sweep entry on a pool of `workers` threads (0 = rayon's
/// default). Results come back in job order whatever the schedule.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<JobOutput>> {
    cfg.validate()?;
    let system = cfg.system()?;
    let layout = cfg.layout()?;
    let jobs = cfg.jobs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(cfg, &system, &layout, job).map_err(|e| e.in_run(format!("{} seed {}", job.tag(), job.seed))))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub file: String,
    pub algo: String,
    pub seed: u64,
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub generator: String,
    pub target: String,
    pub updates: usize,
    pub gap: usize,
    pub buffers: usize,
    pub config: ExperimentConfig,
    pub runs: Vec<ManifestRun>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Writes one CSV per trace and the manifest into `dir`. Every file goes
/// through a temp file and a rename.
pub fn write_outputs(cfg: &ExperimentConfig, outputs: &[JobOutput], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let layout = cfg.layout()?;
    let mut runs = Vec::with_capacity(outputs.len());
    for out in outputs {
        let file = out.job.file_name();
        out.trace.write_csv_file(&dir.join(&file))?;
        runs.push(ManifestRun {
            file,
            algo: out.trace.algo.clone(),
            seed: out.trace.seed,
            step_sizes: out.step_sizes.clone(),
        });
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        generator: format!("dsgd-rer {}", env!("CARGO_PKG_VERSION")),
        target: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        updates: layout.updates(),
        gap: layout.gap(),
        buffers: layout.buffer_count(),
        config: cfg.clone(),
        runs,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Reads trace CSVs. When a manifest sits next to a file, the traces take
/// its config hash so that [`summary::summarize`] can reject mixed inputs.
pub fn load_traces(paths: &[PathBuf]) -> Result<Vec<ErrorTrace>> {
    let mut all = Vec::new();
    for path in paths {
        let mut traces = trace::read_csv_file(path).map_err(|e| e.in_run(path.display().to_string()))?;
        let manifest = path.parent().map(|p| p.join(MANIFEST_FILE)).filter(|p| p.is_file());
        if let Some(manifest) = manifest {
            let hash = Manifest::read(&manifest)?.config_hash;
            for t in &mut traces {
                t.config_hash = hash.clone();
            }
        }
        all.extend(traces);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let text = config::preset("smoke").unwrap().replace("horizon = 20000", "horizon = 3000");
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn experiment_is_schedule_independent() {
        let cfg = tiny();
        let a = run_experiment(&cfg, 1).unwrap();
        let b = run_experiment(&cfg, 3).unwrap();
        assert_eq!(a.len(), cfg.jobs().len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trace.to_csv_string(), y.trace.to_csv_string());
        }
    }

    #[test]
    fn outputs_round_trip() {
        let cfg = tiny();
        let outs = run_experiment(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_outputs(&cfg, &outs, dir.path()).unwrap();
        let m = Manifest::read(&manifest).unwrap();
        assert_eq!(m.config, cfg);
        assert_eq!(m.runs.len(), outs.len());
        let paths: Vec<PathBuf> = m.runs.iter().map(|r| dir.path().join(&r.file)).collect();
        let back = load_traces(&paths).unwrap();
        for (t, o) in back.iter().zip(&outs) {
            assert_eq!(t, &o.trace);
        }
    }

    #[test]
    fn ols_trace_is_a_single_point() {
        let cfg = tiny();
        let job = cfg.jobs().into_iter().find(|j| j.algorithm == Algorithm::PooledOls).unwrap();
        let out = run_job(&cfg, &cfg.system().unwrap(), &cfg.layout().unwrap(), &job).unwrap();
        assert_eq!(out.trace.rows.len(), 1);
        assert!(out.trace.rows[0].error < 0.2);
    }
}
