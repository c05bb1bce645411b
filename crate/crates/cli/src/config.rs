//! Run configuration: a TOML file with optional sections, every key
//! defaulted, unknown keys rejected. Command-line flags override file values.
//!
//! ```toml
//! [data]
//! train = "train_FD001.txt"
//! test = "test_FD001.txt"
//! truth = "RUL_FD001.txt"
//! name = "FD001"
//!
//! [synthetic]          # used when [data] has no train file
//! engines = 40
//! test_engines = 20
//! seed = 0
//! regimes = 1
//! severity = 1.0
//!
//! [model]
//! seq_len = 100
//! channels = []        # empty: all 24 features
//! reduction = "last"
//! dropout = 0.2
//!
//! [train]              # learning_rate, beta1, beta2, epsilon, batch_size, epochs,
//!                      # max_steps, seed, augment, lambda, r_max, stride,
//!                      # clip_norm, validation_fraction, precision
//! [eval]
//! score = "phm08"      # or "as_printed"
//! curve_engines = []
//!
//! [output]
//! dir = "runs"
//! keep_checkpoints = 3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcmn_core::data::{DEFAULT_SEQ_LEN, NUM_FEATURES};
use tcmn_core::eval::ScoreVariant;
use tcmn_core::nn::{NetworkSpec, SeqReduction};
use tcmn_core::optim::TrainConfig;
use tcmn_core::Real;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Label written into evaluation summaries.
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub engines: usize,
    pub test_engines: usize,
    pub seed: u64,
    pub regimes: usize,
    pub severity: Real,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            engines: 40,
            test_engines: 20,
            seed: 0,
            regimes: 1,
            severity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seq_len: usize,
    /// Feature columns (0-based, settings first) fed to the network; empty
    /// selects all of them.
    pub channels: Vec<usize>,
    pub reduction: SeqReduction,
    pub dropout: Real,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: DEFAULT_SEQ_LEN,
            channels: Vec::new(),
            reduction: SeqReduction::Last,
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn channel_count(&self) -> usize {
        if self.channels.is_empty() {
            NUM_FEATURES
        } else {
            self.channels.len()
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::scaled(self.seq_len, self.channel_count())
            .with_dropout(self.dropout)
            .with_reduction(self.reduction)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub score: ScoreVariant,
    pub curve_engines: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub keep_checkpoints: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            keep_checkpoints: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output: OutputConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| match e {
            tcmn_core::optim::OptimError::Usage(m) => ConfigError::Invalid(format!("[train] {m}")),
            other => ConfigError::Invalid(format!("[train] {other}")),
        })?;
        let m = &self.model;
        if m.seq_len == 0 {
            return Err(ConfigError::Invalid(
                "[model] seq_len must be >= 1, got 0".into(),
            ));
        }
        if let Some(&c) = m.channels.iter().find(|&&c| c >= NUM_FEATURES) {
            return Err(ConfigError::Invalid(format!(
                "[model] channels entries must be < {NUM_FEATURES}, got {c}"
            )));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(ConfigError::Invalid(format!(
                "[model] dropout must be in [0, 1), got {}",
                m.dropout
            )));
        }
        let s = &self.synthetic;
        if s.engines == 0 || s.test_engines == 0 {
            return Err(ConfigError::Invalid(
                "[synthetic] engines and test_engines must be >= 1".into(),
            ));
        }
        if !(1..=6).contains(&s.regimes) {
            return Err(ConfigError::Invalid(format!(
                "[synthetic] regimes must be in 1..=6, got {}",
                s.regimes
            )));
        }
        if !(s.severity >= 0.0 && s.severity.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "[synthetic] severity must be a non-negative number, got {}",
                s.severity
            )));
        }
        if self.output.keep_checkpoints == 0 {
            return Err(ConfigError::Invalid(
                "[output] keep_checkpoints must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Model and training keys as `key=value` lines, stored in checkpoints.
    pub fn snapshot(&self) -> String {
        let channels: Vec<String> = self.model.channels.iter().map(|c| c.to_string()).collect();
        format!(
            "seq_len={}\nchannels={}\n{}",
            self.model.seq_len,
            channels.join(","),
            self.train.snapshot()
        )
    }
}

/// Parses the `channels=` value of a snapshot.
pub fn parse_channel_list(value: &str) -> Result<Vec<usize>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&c| c < NUM_FEATURES)
                .ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "channels entry '{v}' is not an index below {NUM_FEATURES}"
                    ))
                })
        })
        .collect()
}
