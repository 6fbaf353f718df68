//! Experiment configs in TOML, and the built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{default_gap, BufferLayout, Record, RunOptions, StepSizePolicy};
use crate::lti::{make_system, two_level_spectrum, InitialState, LtiSystem, NoiseKind};
use crate::matlib::Matrix;
use crate::network::TopologySpec;

/// Environment variable that overrides the output directory of any config.
pub const OUTPUT_DIR_ENV: &str = "DSGD_RER_OUTPUT_DIR";

const PRESETS: [(&str, &str); 5] = [
    ("size-desk", include_str!("../../presets/size-desk.toml")),
    ("topology-desk", include_str!("../../presets/topology-desk.toml")),
    ("size-full", include_str!("../../presets/size-full.toml")),
    ("topology-full", include_str!("../../presets/topology-full.toml")),
    ("smoke", include_str!("../../presets/smoke.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.0)
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerAgentTag {
    #[serde(rename = "per-agent")]
    PerAgent,
}

/// `"auto"` for `u = floor(sqrt(T / ln T))`, or a literal `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GapSpec {
    Literal(usize),
    Formula(AutoTag),
}

impl Default for GapSpec {
    fn default() -> Self {
        GapSpec::Formula(AutoTag::Auto)
    }
}

/// `"per-agent"` or a global step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSizeSpec {
    Global(f64),
    Named(PerAgentTag),
}

impl Default for StepSizeSpec {
    fn default() -> Self {
        StepSizeSpec::Named(PerAgentTag::PerAgent)
    }
}

impl StepSizeSpec {
    pub fn policy(&self) -> StepSizePolicy {
        match *self {
            StepSizeSpec::Global(g) => StepSizePolicy::Global(g),
            StepSizeSpec::Named(PerAgentTag::PerAgent) => StepSizePolicy::PerAgent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dim: usize,
    /// Two eigenvalue levels: `ceil(d/2)` copies of the first, the rest of
    /// the second. Ignored when `eigenvalues` is given.
    #[serde(default = "default_levels")]
    pub levels: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    /// `Σ = noise_variance · I`.
    #[serde(default = "one")]
    pub noise_variance: f64,
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub initial_state: InitialState,
}

fn default_levels() -> [f64; 2] {
    [0.9, 0.3]
}

fn one() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: usize,
    #[serde(default)]
    pub gap: GapSpec,
    /// `B = update_multiplier · u`.
    #[serde(default = "ten")]
    pub update_multiplier: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub step_size: StepSizeSpec,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub record: Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub agents: Vec<usize>,
    pub topologies: Vec<TopologySpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Pooled OLS for every agent count.
    #[serde(default)]
    pub ols: bool,
    /// Topologies on which forward D-SGD also runs, for every agent count.
    #[serde(default)]
    pub vanilla_on: Vec<TopologySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub system: SystemConfig,
    pub run: RunConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DsgdRer,
    VanillaDsgd,
    PooledOls,
}

impl Algorithm {
    pub fn name(&self, agents: usize) -> &'static str {
        match self {
            Algorithm::DsgdRer if agents == 1 => "sgd-rer",
            Algorithm::DsgdRer => "dsgd-rer",
            Algorithm::VanillaDsgd => "vanilla-dsgd",
            Algorithm::PooledOls => "ols",
        }
    }
}

/// One entry of a sweep: an algorithm on one setting with one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub algorithm: Algorithm,
    pub agents: usize,
    pub topology: TopologySpec,
    pub seed: u64,
}

impl Job {
    /// Group tag, e.g. `dsgd-rer@m5/cyclic`.
    pub fn tag(&self) -> String {
        format!("{}@m{}/{}", self.algorithm.name(self.agents), self.agents, self.topology.label())
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}_m{}_{}_seed{}.csv",
            self.algorithm.name(self.agents),
            self.agents,
            self.topology.label(),
            self.seed
        )
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A preset name, or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            let text = std::fs::read_to_string(path)?;
            return Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())));
        }
        match preset(name_or_path) {
            Some(text) => Self::from_toml(text),
            None => Err(Error::Config(format!(
                "{name_or_path} is neither a file nor a preset ({})",
                preset_names().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let s = &self.system;
        if s.dim == 0 {
            return bad("system.dim must be >= 1".into());
        }
        if let Some(eigs) = &s.eigenvalues {
            if eigs.len() != s.dim {
                return bad(format!("{} eigenvalues for dim {}", eigs.len(), s.dim));
            }
        }
        if !(s.noise_variance > 0.0 && s.noise_variance.is_finite()) {
            return bad("system.noise_variance must be positive".into());
        }
        let r = &self.run;
        if r.seeds.is_empty() {
            return bad("run.seeds is empty".into());
        }
        if r.update_multiplier == 0 {
            return bad("run.update_multiplier must be >= 1".into());
        }
        if let StepSizeSpec::Global(g) = r.step_size {
            if !(g >= 0.0 && g.is_finite()) {
                return bad(format!("run.step_size {g} must be finite and >= 0"));
            }
        }
        let n = &self.network;
        if n.agents.is_empty() || n.agents.contains(&0) {
            return bad("network.agents must list agent counts >= 1".into());
        }
        if n.topologies.is_empty() {
            return bad("network.topologies is empty".into());
        }
        self.layout()?;
        Ok(())
    }

    pub fn system(&self) -> Result<LtiSystem> {
        let s = &self.system;
        let eigs = match &s.eigenvalues {
            Some(e) => e.clone(),
            None => two_level_spectrum(s.dim, s.levels[0], s.levels[1]),
        };
        make_system(s.dim, &eigs, Matrix::scaled_identity(s.dim, s.noise_variance), s.seed)
    }

    pub fn layout(&self) -> Result<BufferLayout> {
        let r = &self.run;
        let gap = match r.gap {
            GapSpec::Literal(u) => u,
            GapSpec::Formula(_) => default_gap(r.horizon).map_err(|e| Error::Config(e.to_string()))?,
        };
        BufferLayout::new(r.horizon, r.update_multiplier * gap, gap).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            record: self.run.record,
            burn_in: self.run.burn_in,
            init: self.system.initial_state,
            noise: self.system.noise,
        }
    }

    /// Hash of everything that affects the numbers (the output directory
    /// does not).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Sweep entries in config order: DSGD-RER over agents × topologies,
    /// then forward D-SGD, then pooled OLS; seeds innermost. A single agent
    /// always runs on the identity topology, once.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        let push = |algorithm, agents, topology: &TopologySpec, jobs: &mut Vec<Job>| {
            let topology = if agents == 1 {
                TopologySpec::Identity
            } else {
                topology.clone()
            };
            for &seed in &self.run.seeds {
                let job = Job {
                    algorithm,
                    agents,
                    topology: topology.clone(),
                    seed,
                };
                if !jobs.contains(&job) {
                    jobs.push(job);
                }
            }
        };
        for &m in &self.network.agents {
            for topo in &self.network.topologies {
                push(Algorithm::DsgdRer, m, topo, &mut jobs);
            }
        }
        for &m in &self.network.agents {
            for topo in &self.baselines.vanilla_on {
                push(Algorithm::VanillaDsgd, m, topo, &mut jobs);
            }
        }
        if self.baselines.ols {
            for &m in &self.network.agents {
                push(Algorithm::PooledOls, m, &TopologySpec::Identity, &mut jobs);
            }
        }
        jobs
    }

    /// `$DSGD_RER_OUTPUT_DIR`, else `output_dir`, else `out/<name>`.
    pub fn output_dir(&self) -> std::path::PathBuf {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            return dir.into();
        }
        match &self.output_dir {
            Some(dir) => dir.into(),
            None => Path::new("out").join(&self.name),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in preset_names() {
            let cfg = ExperimentConfig::load(name).unwrap();
            assert_eq!(cfg.name, name);
        }
        let size = ExperimentConfig::load("size-desk").unwrap();
        let layout = size.layout().unwrap();
        assert_eq!((layout.gap(), layout.updates()), (128, 1280));
        assert_eq!(size.jobs().len(), 15);
        let full = ExperimentConfig::load("size-full").unwrap().layout().unwrap();
        assert_eq!((full.gap(), full.updates(), full.buffer_count()), (787, 7870, 1155));
    }

    #[test]
    fn topology_jobs_in_config_order() {
        let cfg = ExperimentConfig::load("topology-desk").unwrap();
        let tags: Vec<String> = cfg.jobs().iter().step_by(5).map(Job::tag).collect();
        assert_eq!(
            tags,
            ["dsgd-rer@m5/identity", "dsgd-rer@m5/cyclic", "dsgd-rer@m5/complete", "vanilla-dsgd@m5/complete"]
        );
    }

    #[test]
    fn single_agent_runs_once_on_identity() {
        let mut cfg = ExperimentConfig::load("topology-desk").unwrap();
        cfg.network.agents = vec![1];
        cfg.baselines.vanilla_on.clear();
        let jobs = cfg.jobs();
        assert_eq!(jobs.len(), 5);
        assert!(jobs.iter().all(|j| j.tag() == "sgd-rer@m1/identity"));
    }

    #[test]
    fn empty_seeds_rejected() {
        let text = preset("smoke").unwrap().replace("seeds = [1, 2]", "seeds = []");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = preset("smoke").unwrap().replace("[run]", "[run]\nhorizn = 5");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn literal_gap_and_global_step() {
        let text = preset("smoke")
            .unwrap()
            .replace("gap = \"auto\"", "gap = 4")
            .replace("step_size = \"per-agent\"", "step_size = 0.001");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let layout = cfg.layout().unwrap();
        assert_eq!((layout.gap(), layout.updates()), (4, 40));
        assert_eq!(cfg.run.step_size.policy(), StepSizePolicy::Global(0.001));
    }

    #[test]
    fn round_trip_and_hash() {
        let cfg = ExperimentConfig::load("topology-desk").unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut moved = cfg.clone();
        moved.output_dir = Some("elsewhere".into());
        assert_eq!(moved.hash(), cfg.hash());
        let mut changed = cfg.clone();
        changed.run.seeds.push(9);
        assert_ne!(changed.hash(), cfg.hash());
    }
}
