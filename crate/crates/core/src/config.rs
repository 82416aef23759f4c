use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::codec::Precision;

/// Column subset selection strategy for the label embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CssStrategy {
    /// Forward selection of the column that most reduces the residual.
    #[default]
    Greedy,
    /// Best of several norm-weighted random draws.
    Sampled,
    /// Exhaustive enumeration of all subsets.
    Bruteforce,
}

impl fmt::Display for CssStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CssStrategy::Greedy => "greedy",
            CssStrategy::Sampled => "sampled",
            CssStrategy::Bruteforce => "bruteforce",
        })
    }
}

impl FromStr for CssStrategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(CssStrategy::Greedy),
            "sampled" => Ok(CssStrategy::Sampled),
            "bruteforce" => Ok(CssStrategy::Bruteforce),
            other => Err(ConfigError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("embedding size r={r} must be in [1, {max}]")]
    EmbeddingSize { r: usize, max: usize },
    #[error("cluster count k must be at least 1")]
    ZeroClusters,
    #[error("unsupported precision b={0} (expected 16, 32 or 64)")]
    Precision(usize),
    #[error("ridge regularizer must be positive and finite, got {0}")]
    Lambda(f64),
    #[error("bit threshold must be finite, got {0}")]
    Threshold(f64),
    #[error("unknown column selection strategy {0:?}")]
    UnknownStrategy(String),
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Embedding size (number of selected label columns).
    pub r: usize,
    /// Number of clusters.
    pub k: usize,
    pub precision: Precision,
    pub lambda: f64,
    /// A lifted label entry becomes bit 1 iff it is strictly greater than this.
    pub threshold: f64,
    pub seed: u64,
    pub css_strategy: CssStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            r: 50,
            k: 1,
            precision: Precision::Half,
            lambda: 0.1,
            threshold: 0.5,
            seed: 0,
            css_strategy: CssStrategy::Greedy,
        }
    }
}

impl TrainConfig {
    /// Builds a config from a raw bit width, validating everything.
    pub fn with_bits(r: usize, k: usize, bits: usize) -> Result<Self, ConfigError> {
        let precision = Precision::from_bits(bits).ok_or(ConfigError::Precision(bits))?;
        let cfg = TrainConfig {
            r,
            k,
            precision,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let max = self.precision.label_len();
        if self.r == 0 || self.r > max {
            return Err(ConfigError::EmbeddingSize { r: self.r, max });
        }
        if self.k == 0 {
            return Err(ConfigError::ZeroClusters);
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ConfigError::Lambda(self.lambda));
        }
        if !self.threshold.is_finite() {
            return Err(ConfigError::Threshold(self.threshold));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(cfg.precision.bits(), 16);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert_eq!(
            TrainConfig::with_bits(113, 1, 16),
            Err(ConfigError::EmbeddingSize { r: 113, max: 112 })
        );
        assert!(TrainConfig::with_bits(224, 1, 32).is_ok());
        assert_eq!(TrainConfig::with_bits(0, 1, 16), Err(ConfigError::EmbeddingSize { r: 0, max: 112 }));
        assert_eq!(TrainConfig::with_bits(10, 0, 16), Err(ConfigError::ZeroClusters));
        assert_eq!(TrainConfig::with_bits(10, 1, 8), Err(ConfigError::Precision(8)));
        let cfg = TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.validate(), Err(ConfigError::Lambda(0.0)));
    }

    #[test]
    fn strategy_names() {
        for s in [CssStrategy::Greedy, CssStrategy::Sampled, CssStrategy::Bruteforce] {
            assert_eq!(s.to_string().parse::<CssStrategy>().unwrap(), s);
        }
        assert!("random".parse::<CssStrategy>().is_err());
    }
}
