//! Run configuration: defaults, TOML file, and flag overrides, resolved into
//! one snapshot that reproduces the run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cremax::{CremaxConfig, TaskKind};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::rewards::RewardSpec;
use crate::seed::substream_seed;
use crate::tinylm::SftConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractSection {
    pub patterns: Vec<String>,
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection {
            patterns: crate::corpus::DEFAULT_SECTION_PATTERNS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Policy architecture shared by both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub rank: usize,
    pub context_window: usize,
    pub w0_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            rank: 12,
            context_window: 1,
            w0_scale: 0.02,
        }
    }
}

/// RL stage settings plus the synthetic environment selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlSection {
    pub lambda_kl: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub iterations: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub stop_at_accuracy: Option<f64>,
    pub task: TaskKind,
    pub n_symbols: usize,
    pub prompt_len: usize,
    pub seed: u64,
}

impl Default for RlSection {
    fn default() -> Self {
        RlSection {
            lambda_kl: 0.001,
            learning_rate: 0.05,
            batch_size: 32,
            max_steps: 10,
            iterations: 5000,
            eval_every: 25,
            eval_episodes: 64,
            stop_at_accuracy: None,
            task: TaskKind::Copy,
            n_symbols: 8,
            prompt_len: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub linear_decay: bool,
    /// Demonstration count for `train sft --env`.
    pub demos: usize,
    pub seed: u64,
}

impl Default for SftSection {
    fn default() -> Self {
        let base = SftConfig::<f64>::default();
        SftSection {
            learning_rate: base.learning_rate,
            epochs: base.epochs,
            batch_size: base.batch_size,
            weight_decay: base.weight_decay,
            linear_decay: base.linear_decay,
            demos: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub tasks: Vec<TaskKind>,
    pub episodes: usize,
    pub n_symbols: usize,
    pub prompt_len: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            tasks: vec![TaskKind::Copy],
            episodes: 200,
            n_symbols: 8,
            prompt_len: 6,
            max_steps: 10,
            seed: 0,
        }
    }
}

/// The resolved configuration of one run. A snapshot of this struct is
/// written next to every output so any run can be replayed from its file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub extract: ExtractSection,
    pub reward: RewardSpec<f64>,
    pub distill: DistillConfig,
    pub model: ModelSection,
    pub sft: SftSection,
    pub rl: RlSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Loads the file when given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p)?;
                toml::from_str(&raw).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.resolve_substreams();
        Ok(cfg)
    }

    /// Stage seeds always derive from the master seed via named substreams,
    /// so every stage is independently reproducible.
    pub fn resolve_substreams(&mut self) {
        self.distill.seed = substream_seed(self.seed, "distill");
        self.sft.seed = substream_seed(self.seed, "sft");
        self.rl.seed = substream_seed(self.seed, "rl");
        self.eval.seed = substream_seed(self.seed, "eval");
    }

    pub fn set_master_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.resolve_substreams();
    }

    pub fn sft_config(&self) -> SftConfig<f64> {
        SftConfig {
            learning_rate: self.sft.learning_rate,
            epochs: self.sft.epochs,
            batch_size: self.sft.batch_size,
            seed: self.sft.seed,
            weight_decay: self.sft.weight_decay,
            linear_decay: self.sft.linear_decay,
            ..SftConfig::default()
        }
    }

    pub fn cremax_config(&self) -> CremaxConfig<f64> {
        CremaxConfig {
            lambda_kl: self.rl.lambda_kl,
            learning_rate: self.rl.learning_rate,
            batch_size: self.rl.batch_size,
            max_steps: self.rl.max_steps,
            seed: self.rl.seed,
            reward: self.reward.clone(),
            iterations: self.rl.iterations,
            eval_every: self.rl.eval_every,
            eval_episodes: self.rl.eval_episodes,
            stop_at_accuracy: self.rl.stop_at_accuracy,
            ..CremaxConfig::default()
        }
    }

    /// Writes the resolved snapshot as TOML.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let rendered =
            toml::to_string(self).map_err(|e| Error::config(format!("snapshot: {e}")))?;
        std::fs::write(path, rendered)?;
        Ok(())
    }
}

/// Snapshot path convention: `<output>.config.toml`.
pub fn snapshot_path(output: &Path) -> std::path::PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_owned());
    name.push_str(".config.toml");
    output.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substream_seeds_are_stable_functions_of_the_master() {
        let mut a = RunConfig::default();
        a.set_master_seed(42);
        let mut b = RunConfig::default();
        b.set_master_seed(42);
        assert_eq!(a, b);
        assert_ne!(a.distill.seed, a.sft.seed);
        assert_ne!(a.sft.seed, a.rl.seed);
    }

    #[test]
    fn snapshot_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.config.toml");
        let mut cfg = RunConfig::default();
        cfg.set_master_seed(7);
        cfg.rl.iterations = 123;
        cfg.reward.beta = 0.5;
        cfg.write_snapshot(&path).unwrap();
        let back = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn snapshot_path_appends_suffix() {
        let p = snapshot_path(Path::new("/tmp/out/pairs.jsonl"));
        assert_eq!(p, Path::new("/tmp/out/pairs.jsonl.config.toml"));
    }
}
