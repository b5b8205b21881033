//! Run configuration: one TOML file, every field defaulted.

use std::path::Path;

use cost_unroll::experiments::{Demo2dConfig, ExperimentConfig, PcSignalSpec};
use cost_unroll::mlp::MlpConfig;
use cost_unroll::{Error, RegularizerConfig, RegularizerKind, UnrollGradient};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn scoped(prefix: &str, err: Error) -> Self {
        match err {
            Error::InvalidParameter { name, reason } => ConfigError::field(format!("{prefix}.{name}"), reason),
            other => ConfigError::field(prefix, other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub lr: f64,
    pub steps: usize,
    pub unroll_gradient: UnrollGradient,
    pub warm_start: bool,
    /// Positions where `∂loss/∂f` is logged.
    pub probes: Vec<f64>,
}

impl Default for Training {
    fn default() -> Self {
        let base = ExperimentConfig::default();
        Training {
            lr: base.lr,
            steps: base.steps,
            unroll_gradient: base.unroll_gradient,
            warm_start: base.warm_start,
            probes: base.probes,
        }
    }
}

/// Hyperparameters for each regularizer, tuned independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerRegularizer {
    pub tv: RegularizerConfig,
    pub huber: RegularizerConfig,
    pub charbonnier: RegularizerConfig,
    pub unrolled: RegularizerConfig,
}

impl Default for PerRegularizer {
    fn default() -> Self {
        PerRegularizer {
            tv: ExperimentConfig::preset(RegularizerKind::Tv).regularizer_config,
            huber: ExperimentConfig::preset(RegularizerKind::Huber).regularizer_config,
            charbonnier: ExperimentConfig::preset(RegularizerKind::Charbonnier).regularizer_config,
            unrolled: ExperimentConfig::preset(RegularizerKind::Unrolled).regularizer_config,
        }
    }
}

impl PerRegularizer {
    pub fn get(&self, kind: RegularizerKind) -> &RegularizerConfig {
        match kind {
            RegularizerKind::Tv => &self.tv,
            RegularizerKind::Huber => &self.huber,
            RegularizerKind::Charbonnier => &self.charbonnier,
            RegularizerKind::Unrolled => &self.unrolled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seeds: Vec<u64>,
    pub regularizers: Vec<RegularizerKind>,
    pub training: Training,
    pub mlp: MlpConfig,
    pub signal: PcSignalSpec,
    pub regularizer: PerRegularizer,
    /// When present, `run` also executes the masked 2D demo.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub demo2d: Option<Demo2dConfig>,
}

impl Default for Config {
    fn default() -> Self {
        let base = ExperimentConfig::default();
        Config {
            seeds: (0..10).collect(),
            regularizers: RegularizerKind::ALL.to_vec(),
            training: Training::default(),
            mlp: base.mlp,
            signal: base.signal,
            regularizer: PerRegularizer::default(),
            demo2d: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::field("seeds", "at least one seed is required"));
        }
        if self.regularizers.is_empty() {
            return Err(ConfigError::field("regularizers", "at least one regularizer is required"));
        }
        for (i, kind) in self.regularizers.iter().enumerate() {
            if self.regularizers[..i].contains(kind) {
                return Err(ConfigError::field("regularizers", format!("`{kind}` listed twice")));
            }
        }
        for &kind in &self.regularizers {
            self.regularizer
                .get(kind)
                .validate()
                .map_err(|e| ConfigError::scoped(&format!("regularizer.{kind}"), e))?;
        }
        self.mlp.validate().map_err(|e| ConfigError::scoped("mlp", e))?;
        self.signal.validate().map_err(|e| ConfigError::scoped("signal", e))?;
        for &kind in &self.regularizers {
            self.experiment(kind, self.seeds[0])
                .validate()
                .map_err(|e| ConfigError::scoped("training", e))?;
        }
        if let Some(demo) = &self.demo2d {
            demo.validate().map_err(|e| ConfigError::scoped("demo2d", e))?;
        }
        Ok(())
    }

    pub fn experiment(&self, kind: RegularizerKind, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            regularizer: kind,
            regularizer_config: *self.regularizer.get(kind),
            unroll_gradient: self.training.unroll_gradient,
            warm_start: self.training.warm_start,
            mlp: self.mlp,
            lr: self.training.lr,
            steps: self.training.steps,
            signal: self.signal.clone(),
            seed,
            probes: self.training.probes.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = Config {
            demo2d: Some(Demo2dConfig::default()),
            seeds: vec![3, 1],
            ..Config::default()
        };
        let once = Config::parse(&cfg.to_toml()).unwrap();
        assert_eq!(once, cfg);
        assert_eq!(Config::parse(&once.to_toml()).unwrap(), once);
    }

    #[test]
    fn errors_name_the_field() {
        let err = Config::parse("[regularizer.huber]\nlambda = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("regularizer.huber.lambda"), "{err}");
        let err = Config::parse("[training]\nlr = 0.0\n").unwrap_err();
        assert!(err.to_string().contains("training.lr"), "{err}");
        let err = Config::parse("[mlp]\nhidden_width = 0\n").unwrap_err();
        assert!(err.to_string().contains("mlp.hidden_width"), "{err}");
        let err = Config::parse("seeds = []\n").unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::parse("[training]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn unused_regularizer_sections_are_not_validated() {
        let text = "regularizers = [\"tv\"]\n[regularizer.huber]\nhuber_k = 0.0\n";
        assert!(Config::parse(text).is_ok());
    }
}
