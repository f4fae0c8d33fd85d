//! Pipeline configuration file (TOML). Every section is optional; absent
//! keys take the library defaults and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ica::Nonlinearity;
use crate::mixture::MixtureConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config value: {0}")]
    Bound(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub ica: IcaSection,
    #[serde(default)]
    pub raicar: RaicarSection,
    #[serde(default)]
    pub null: NullSection,
    #[serde(default)]
    pub grouping: GroupingSection,
    #[serde(default)]
    pub mixture: MixtureSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcaSection {
    pub q: Option<usize>,
    pub nonlinearity: Nonlinearity,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for IcaSection {
    fn default() -> Self {
        Self { q: None, nonlinearity: Nonlinearity::default(), max_iters: 500, tol: 1e-6 }
    }
}

/// Matching has no tunable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RaicarSection {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullSection {
    #[serde(rename = "R")]
    pub replicates: usize,
    pub p_crit: f64,
}

impl Default for NullSection {
    fn default() -> Self {
        Self { replicates: 100, p_crit: crate::null::NullConfig::DEFAULT_P_CRIT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupingSection {
    #[serde(rename = "N")]
    pub subjects: Option<usize>,
    pub alpha_max: f64,
    #[serde(rename = "K")]
    pub groups: usize,
}

impl Default for GroupingSection {
    fn default() -> Self {
        Self { subjects: None, alpha_max: 0.05, groups: crate::grouping::DEFAULT_GROUPS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSection {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for MixtureSection {
    fn default() -> Self {
        let d = MixtureConfig::default();
        Self { max_iters: d.max_iters, tol: d.tol }
    }
}

impl MixtureSection {
    pub fn to_config(&self) -> MixtureConfig {
        MixtureConfig { max_iters: self.max_iters, tol: self.tol }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Bound(format!("{name} must be positive, got {v}")))
    }
}

fn open_unit(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(ConfigError::Bound(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ica.q == Some(0) {
            return Err(ConfigError::Bound("ica.q must be at least 1".into()));
        }
        if self.ica.max_iters == 0 {
            return Err(ConfigError::Bound("ica.max_iters must be at least 1".into()));
        }
        positive("ica.tol", self.ica.tol)?;
        if self.null.replicates == 0 {
            return Err(ConfigError::Bound("null.R must be at least 1".into()));
        }
        open_unit("null.p_crit", self.null.p_crit)?;
        if matches!(self.grouping.subjects, Some(n) if n < 2) {
            return Err(ConfigError::Bound("grouping.N must be at least 2".into()));
        }
        open_unit("grouping.alpha_max", self.grouping.alpha_max)?;
        if self.grouping.groups == 0 {
            return Err(ConfigError::Bound("grouping.K must be at least 1".into()));
        }
        if self.mixture.max_iters == 0 {
            return Err(ConfigError::Bound("mixture.max_iters must be at least 1".into()));
        }
        positive("mixture.tol", self.mixture.tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn full_document() {
        let cfg = PipelineConfig::parse(
            r#"
seed = 9
[ica]
q = 8
nonlinearity = "cubic"
[null]
R = 200
p_crit = 0.01
[grouping]
N = 23
alpha_max = 0.05
K = 50
[mixture]
max_iters = 300
tol = 1e-8
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.ica.q, Some(8));
        assert_eq!(cfg.ica.nonlinearity, Nonlinearity::Cubic);
        assert_eq!(cfg.null.replicates, 200);
        assert_eq!(cfg.grouping.subjects, Some(23));
        assert_eq!(cfg.mixture.max_iters, 300);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::parse("[null]\nreplicates = 5\n").is_err());
        assert!(PipelineConfig::parse("colour = 1\n").is_err());
        assert!(PipelineConfig::parse("[raicar]\nfoo = 1\n").is_err());
    }

    #[test]
    fn bounds_enforced() {
        assert!(PipelineConfig::parse("[null]\nR = 0\n").is_err());
        assert!(PipelineConfig::parse("[null]\np_crit = 1.5\n").is_err());
        assert!(PipelineConfig::parse("[ica]\nq = 0\n").is_err());
        assert!(PipelineConfig::parse("[grouping]\nalpha_max = 0\n").is_err());
        assert!(PipelineConfig::parse("[mixture]\ntol = -1.0\n").is_err());
    }
}
