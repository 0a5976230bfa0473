//! Plain-text configuration for the command-line tools.
//!
//! Grammar: one `key = value` per line; blank lines and `#` comments are
//! skipped; values keep internal whitespace but are trimmed at the ends.
//! Keys outside the known vocabulary are collected (never silently dropped)
//! so callers can warn about typos. List-valued keys (`n`, `h`, `settings`)
//! take comma-separated entries.

use serde::Serialize;
use thiserror::Error;

use crate::experiments::{ExperimentSpec, Setting, setting};
use crate::model::{
    HestonParams, JumpDist, JumpSpec, ModelError, ModelSpec, SamplingGrid, TwoFactorParams,
    VolFactor,
};

/// Keys the tools understand. Anything else lands in `unknown_keys`.
pub const KNOWN_KEYS: &[&str] = &[
    "mu",
    "k",
    "theta",
    "sigma_v",
    "rho",
    "h",
    "n",
    "substeps",
    "seed",
    "jump.lambda",
    "jump.dist",
    "jump.mean",
    "jump.sd",
    "factor2.k",
    "factor2.theta",
    "factor2.sigma_v",
    "label",
    "settings",
    "replications",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line} is not `key = value`: {content:?}")]
    Syntax { line: usize, content: String },
    #[error("config key {key:?} appears more than once")]
    DuplicateKey { key: String },
    #[error("config key {key:?} is required but missing")]
    MissingKey { key: String },
    #[error("config key {key:?} has value {value:?}, expected {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("unknown model kind {kind:?}; expected heston, svj-return, svj-variance or two-factor")]
    UnknownModel { kind: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parsed `key = value` pairs with typed accessors.
#[derive(Debug, Clone, Serialize)]
pub struct Config {
    pairs: Vec<(String, String)>,
    unknown: Vec<String>,
}

/// Model selector shared by the simulate/estimate/moments tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Heston,
    SvjReturn,
    SvjVariance,
    TwoFactor,
}

impl ModelKind {
    pub fn parse(kind: &str) -> Result<Self, ConfigError> {
        match kind {
            "heston" => Ok(Self::Heston),
            "svj-return" => Ok(Self::SvjReturn),
            "svj-variance" => Ok(Self::SvjVariance),
            "two-factor" => Ok(Self::TwoFactor),
            _ => Err(ConfigError::UnknownModel { kind: kind.to_string() }),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut unknown = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: idx + 1, content: raw.to_string() });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line: idx + 1, content: raw.to_string() });
            }
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::DuplicateKey { key });
            }
            if !KNOWN_KEYS.contains(&key.as_str()) {
                unknown.push(key.clone());
            }
            pairs.push((key, value));
        }
        Ok(Self { pairs, unknown })
    }

    /// Keys present in the file but outside [`KNOWN_KEYS`], in file order.
    pub fn unknown_keys(&self) -> &[String] {
        &self.unknown
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn parse_as<T: std::str::FromStr>(
        &self,
        key: &str,
        value: &str,
        expected: &'static str,
    ) -> Result<T, ConfigError> {
        value.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected,
        })
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|v| self.parse_as(key, v, "a real number")).transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.get(key).map(|v| self.parse_as(key, v, "a non-negative integer")).transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(key).map(|v| self.parse_as(key, v, "a non-negative integer")).transpose()
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.get_f64(key)?.ok_or(ConfigError::MissingKey { key: key.to_string() })
    }

    pub fn require_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get_usize(key)?.ok_or(ConfigError::MissingKey { key: key.to_string() })
    }

    fn list<T: std::str::FromStr>(
        &self,
        key: &str,
        expected: &'static str,
    ) -> Result<Option<Vec<T>>, ConfigError> {
        self.get(key)
            .map(|v| v.split(',').map(|item| self.parse_as(key, item.trim(), expected)).collect())
            .transpose()
    }

    /// Observation interval; defaults to 1.0 when absent.
    pub fn h(&self) -> Result<f64, ConfigError> {
        Ok(self.get_f64("h")?.unwrap_or(1.0))
    }

    /// Sampling grid from `h` (default 1.0), `n` (required) and `substeps`
    /// (default 20).
    pub fn grid(&self) -> Result<SamplingGrid, ConfigError> {
        let h = self.h()?;
        let n = self.require_usize("n")?;
        let substeps = self.get_usize("substeps")?.unwrap_or(20);
        Ok(SamplingGrid::new(h, n, substeps)?)
    }

    fn heston(&self) -> Result<HestonParams, ConfigError> {
        Ok(HestonParams::new(
            self.require_f64("mu")?,
            self.require_f64("k")?,
            self.require_f64("theta")?,
            self.require_f64("sigma_v")?,
            self.require_f64("rho")?,
        ))
    }

    fn jump(&self) -> Result<JumpSpec, ConfigError> {
        let lambda = self.require_f64("jump.lambda")?;
        let dist = match self.get("jump.dist") {
            Some("normal") => JumpDist::Normal {
                mean: self.require_f64("jump.mean")?,
                sd: self.require_f64("jump.sd")?,
            },
            Some("exponential") => JumpDist::Exponential { mean: self.require_f64("jump.mean")? },
            Some(other) => {
                return Err(ConfigError::BadValue {
                    key: "jump.dist".to_string(),
                    value: other.to_string(),
                    expected: "normal or exponential",
                });
            }
            None => return Err(ConfigError::MissingKey { key: "jump.dist".to_string() }),
        };
        Ok(JumpSpec::new(lambda, dist)?)
    }

    /// Builds the model for the requested kind from the parameter keys.
    pub fn model(&self, kind: ModelKind) -> Result<ModelSpec, ConfigError> {
        let spec = match kind {
            ModelKind::Heston => ModelSpec::Heston(self.heston()?),
            ModelKind::SvjReturn => ModelSpec::ReturnJump(self.heston()?, self.jump()?),
            ModelKind::SvjVariance => ModelSpec::VarianceJump(self.heston()?, self.jump()?),
            ModelKind::TwoFactor => ModelSpec::TwoFactor(TwoFactorParams {
                mu: self.require_f64("mu")?,
                factor1: VolFactor {
                    k: self.require_f64("k")?,
                    theta: self.require_f64("theta")?,
                    sigma_v: self.require_f64("sigma_v")?,
                },
                factor2: VolFactor {
                    k: self.require_f64("factor2.k")?,
                    theta: self.require_f64("factor2.theta")?,
                    sigma_v: self.require_f64("factor2.sigma_v")?,
                },
            }),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds an experiment spec: `settings` (built-in names, default S0),
    /// `n` and `h` lists, `replications`, `substeps`, `seed`.
    pub fn experiment_spec(&self) -> Result<ExperimentSpec, ConfigError> {
        let settings: Vec<Setting> = match self.get("settings") {
            None => vec![setting("S0").expect("S0 is built in")],
            Some(names) => names
                .split(',')
                .map(|name| {
                    let name = name.trim();
                    setting(name).ok_or_else(|| ConfigError::BadValue {
                        key: "settings".to_string(),
                        value: name.to_string(),
                        expected: "built-in setting names S0..S5",
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        Ok(ExperimentSpec {
            label: self.get("label").unwrap_or("custom").to_string(),
            settings,
            n_list: self.list("n", "a non-negative integer")?.unwrap_or_else(|| vec![100_000]),
            h_list: self.list("h", "a real number")?.unwrap_or_else(|| vec![1.0]),
            replications: self.get_usize("replications")?.unwrap_or(100),
            substeps: self.get_usize("substeps")?.unwrap_or(20),
            master_seed: self.get_u64("seed")?.unwrap_or(20260815),
        })
    }
}
