//! Run configuration file: `sim`, `encoder`, `rl` and `run` sections.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use traffic_sim::{Scenario, SimConfig};

use crate::encoder::{EncoderConfig, Variant};
use crate::error::{Error, Result};
use crate::metrics::ScoreConfig;
use crate::sac::SacConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    /// Number of independently initialised agents to check.
    pub seeds: u64,
    /// Observations per checked batch.
    pub batch: usize,
    /// Sampled entries per parameter tensor; every entry when absent.
    pub entries_per_tensor: Option<usize>,
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Environment steps driven before the batch is recorded, so that
    /// traffic is present.
    pub warmup_steps: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seeds: 5,
            batch: 4,
            entries_per_tensor: Some(24),
            step: 1e-6,
            tolerance: 1e-4,
            floor: 1e-5,
            warmup_steps: 120,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bundled scenario name or a scenario file path relative to the config.
    pub scenario: String,
    pub seed: u64,
    /// Parallel environment instances.
    pub workers: usize,
    /// Environment steps of one training run, summed over workers.
    pub total_steps: usize,
    pub eval_episodes: usize,
    /// Environments stepped in lockstep during evaluation.
    pub eval_batch: usize,
    /// Environment steps between checkpoints; only the final one when 0.
    pub checkpoint_every: usize,
    pub out: PathBuf,
    /// Also evaluate a uniform random policy on the evaluation seeds.
    pub baseline: bool,
    /// Variants trained by `ablate`.
    pub variants: Vec<Variant>,
    /// Print progress to stderr.
    pub verbose: bool,
    pub score: ScoreConfig,
    pub gradcheck: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "straight".into(),
            seed: 0,
            workers: 1,
            total_steps: 200_000,
            eval_episodes: 50,
            eval_batch: 10,
            checkpoint_every: 0,
            out: PathBuf::from("runs"),
            baseline: true,
            variants: Variant::ALL.to_vec(),
            verbose: true,
            score: ScoreConfig::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sim: SimConfig,
    pub encoder: EncoderConfig,
    pub rl: SacConfig,
    pub run: RunConfig,
    /// Directory relative scenario paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    /// Reads and validates a config file. Every failure is a config error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Ties the reward's speed scale to the simulator's speed limit.
    pub fn normalize(&mut self) {
        self.rl.reward.v_max = self.sim.v_max;
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.encoder.validate()?;
        self.rl.validate()?;
        self.run.score.validate()?;
        let r = &self.run;
        if r.workers == 0 || r.eval_episodes == 0 || r.eval_batch == 0 {
            return Err(Error::Config("run: workers, eval_episodes and eval_batch must be >= 1".into()));
        }
        if r.variants.is_empty() {
            return Err(Error::Config("run: variants must not be empty".into()));
        }
        let g = &r.gradcheck;
        if g.batch == 0 || !(g.step > 0.0) || !(g.tolerance > 0.0) {
            return Err(Error::Config("run.gradcheck: batch, step and tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Loads the configured scenario.
    pub fn scenario(&self) -> Result<Arc<Scenario>> {
        let name = &self.run.scenario;
        let sc = if traffic_sim::scenario::BUILTIN.contains(&name.as_str()) {
            Scenario::builtin(name)
        } else {
            Scenario::load(self.base_dir.join(name))
        };
        sc.map(Arc::new)
            .map_err(|e| Error::Config(format!("scenario {name:?}: {e}")))
    }

    /// Short label of the scenario for file names.
    pub fn scenario_label(&self) -> String {
        Path::new(&self.run.scenario)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario")
            .to_string()
    }
}
