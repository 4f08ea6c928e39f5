//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use dip_core::graph::Task;
use dip_core::{AblationFlags, ModelConfig, Normalize, SynthConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Exactly one of a bundle directory or an inline synthetic config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub bundle: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_s: usize,
    pub tau: usize,
    pub layers: usize,
    pub n_p_v: usize,
    pub n_p_t: usize,
    pub normalize: Normalize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_s: 32,
            tau: 8,
            layers: 2,
            n_p_v: 8,
            n_p_t: 8,
            normalize: Normalize::RowSoftmax,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Defaults to 200 for node classification and 100 for link prediction.
    pub epochs: Option<usize>,
    pub lr: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: None,
            lr: 1e-3,
            seed: 0,
            eval_every: 1,
            patience: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Negatives per positive in the frozen ranking pool.
    pub negatives: usize,
    /// Seed of the frozen pool.
    pub negative_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            negatives: 1000,
            negative_seed: 0x5eed,
        }
    }
}

/// Scaling benchmark settings. Graphs are SBMs with a fixed expected
/// degree so edge count grows linearly in `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub dense_sizes: Vec<usize>,
    pub n_p: usize,
    pub tau: usize,
    pub d_s: usize,
    pub layers: usize,
    /// Timed trials per row; one extra warmup trial runs first.
    pub repeats: usize,
    pub avg_degree: f64,
    pub threads: usize,
    /// Dense rows whose score matrices would exceed this are skipped.
    pub dense_max_bytes: u64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2000, 4000, 8000, 16000],
            dense_sizes: vec![500, 1000, 2000],
            n_p: 32,
            tau: 8,
            d_s: 32,
            layers: 2,
            repeats: 5,
            avg_degree: 10.0,
            threads: 1,
            dense_max_bytes: 4 << 30,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        for sizes in [&self.sizes, &self.dense_sizes] {
            if sizes.windows(2).any(|w| w[0] >= w[1]) {
                return bad("bench sizes must be strictly ascending");
            }
            if sizes.iter().any(|&n| n < 8) {
                return bad("bench sizes must be at least 8");
            }
        }
        if self.repeats == 0 || self.threads == 0 || self.n_p == 0 {
            return bad("bench repeats, threads and n_p must be at least 1");
        }
        if self.tau == 0 || !self.d_s.is_multiple_of(self.tau) {
            return bad("bench tau must divide d_s");
        }
        if !(self.avg_degree >= 0.0 && self.avg_degree.is_finite()) {
            return bad("bench avg_degree must be finite and non-negative");
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, returning it with its raw text.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        match (&self.data.bundle, &self.data.synth) {
            (Some(_), Some(_)) | (None, None) => return bad("data needs exactly one of `bundle` or `synth`"),
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        self.model_config(4, 4, Some(2)).validate()?;
        let t = &self.training;
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return bad("training.lr must be finite and non-negative");
        }
        if t.eval_every == 0 {
            return bad("training.eval_every must be at least 1");
        }
        self.bench.validate()?;
        if self.eval.negatives == 0 {
            return bad("eval.negatives must be at least 1");
        }
        if self.task == Task::NodeClassification {
            if let Some(s) = &self.data.synth {
                if s.blocks < 2 {
                    return bad("node classification needs at least two classes");
                }
            }
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.training.epochs.unwrap_or(match self.task {
            Task::NodeClassification => 200,
            Task::LinkPrediction => 100,
        })
    }

    pub fn model_config(&self, d_v: usize, d_t: usize, num_classes: Option<usize>) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            d_v,
            d_t,
            d_s: m.d_s,
            tau: m.tau,
            n_p_v: m.n_p_v,
            n_p_t: m.n_p_t,
            normalize: m.normalize,
            num_classes: match self.task {
                Task::NodeClassification => num_classes,
                Task::LinkPrediction => None,
            },
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
task = "node-classification"
out_dir = "out"
[data.synth]
n = 100
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.epochs(), 200);
        assert_eq!(cfg.model, ModelSection::default());
        assert_eq!(cfg.ablation, AblationFlags::FULL);
        assert_eq!(cfg.data.synth.as_ref().unwrap().n, 100);
        assert_eq!(cfg.eval.negatives, 1000);
    }

    #[test]
    fn rejects_bad_configs() {
        let both = format!("{MINIMAL}bundle = \"x\"\n");
        assert!(matches!(RunConfig::from_toml(&both), Err(CliError::Config(_))));
        let tau = format!("{MINIMAL}[model]\nd_s = 30\ntau = 8\n");
        assert_eq!(RunConfig::from_toml(&tau).unwrap_err().exit_code(), 2);
        let unknown = format!("{MINIMAL}[training]\nlearning_rate = 0.1\n");
        assert!(RunConfig::from_toml(&unknown).is_err());
        let lr = format!("{MINIMAL}[training]\nlr = -1.0\n");
        assert!(RunConfig::from_toml(&lr).is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
