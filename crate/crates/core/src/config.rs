//! Run configuration: a flat TOML table whose keys mirror [`RunConfig`].
//!
//! ```toml
//! problem = "f1d"
//! seed = 7
//! n_init = 20
//! rounds = 60
//! candidates = 100
//! theta_mode = "map"          # or "sample:8"
//! constraint_mode = "surrogate"
//! output_dir = "out"
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::infer::ThetaMode;
use crate::optimizer::{ConstraintMode, OptimizerConfig};

/// Everything that determines one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default)]
    pub theta_mode: ThetaSetting,
    #[serde(default = "default_constraint_mode")]
    pub constraint_mode: ConstraintMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_n_init() -> usize {
    20
}

fn default_rounds() -> usize {
    60
}

fn default_candidates() -> usize {
    100
}

fn default_constraint_mode() -> ConstraintMode {
    ConstraintMode::Surrogate
}

impl RunConfig {
    /// Defaults for a named problem: 20 initial points on 1-d, 25 otherwise.
    pub fn for_problem(problem: &str) -> Self {
        let n_init = if problem == "f2d" { 25 } else { default_n_init() };
        Self {
            problem: problem.to_string(),
            seed: 0,
            n_init,
            rounds: default_rounds(),
            candidates: default_candidates(),
            theta_mode: ThetaSetting::default(),
            constraint_mode: default_constraint_mode(),
            output_dir: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn emit(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem.is_empty() {
            return Err(Error::Config("problem name is empty".into()));
        }
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {}, got {}", i64::MAX, self.seed)));
        }
        self.optimizer_config().validate()
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            n_init: self.n_init,
            rounds: self.rounds,
            m_candidates: self.candidates,
            theta_mode: self.theta_mode.0,
            constraint_mode: self.constraint_mode,
            ..OptimizerConfig::default()
        }
    }
}

/// `ThetaMode` spelled as `"map"` or `"sample:T"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaSetting(pub ThetaMode);

impl Default for ThetaSetting {
    fn default() -> Self {
        Self(ThetaMode::Map)
    }
}

impl fmt::Display for ThetaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            ThetaMode::Map => f.write_str("map"),
            ThetaMode::Sample(t) => write!(f, "sample:{t}"),
        }
    }
}

impl FromStr for ThetaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("map") {
            return Ok(Self(ThetaMode::Map));
        }
        let t =
            s.strip_prefix("sample:").and_then(|t| t.parse::<usize>().ok()).filter(|&t| t > 0).ok_or_else(|| {
                Error::Config(format!("theta mode must be 'map' or 'sample:T' with T >= 1, got '{s}'"))
            })?;
        Ok(Self(ThetaMode::Sample(t)))
    }
}

impl Serialize for ThetaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ThetaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surrogate" => Ok(Self::Surrogate),
            "known-indicator" => Ok(Self::KnownIndicator),
            "none" => Ok(Self::None),
            other => {
                Err(Error::Config(format!("constraint mode must be surrogate, known-indicator or none, got '{other}'")))
            }
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Surrogate => "surrogate",
            Self::KnownIndicator => "known-indicator",
            Self::None => "none",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let cfg = RunConfig::parse(
            r#"
            problem = "f2d"
            seed = 3
            n_init = 25
            rounds = 100
            candidates = 100
            theta_mode = "sample:8"
            constraint_mode = "known-indicator"
            output_dir = "runs/a"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.theta_mode.0, ThetaMode::Sample(8));
        assert_eq!(cfg.constraint_mode, ConstraintMode::KnownIndicator);
        assert_eq!(cfg.output_dir, Some(PathBuf::from("runs/a")));
        assert_eq!(RunConfig::parse(&cfg.emit().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = RunConfig::parse("problem = \"f1d\"").unwrap();
        assert_eq!(cfg, RunConfig::for_problem("f1d"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("problem = \"f1d\"\nbogus = 1").is_err());
        assert!(RunConfig::parse("problem = \"f1d\"\nn_init = 1").is_err());
        assert!(RunConfig::parse("problem = \"f1d\"\ncandidates = 0").is_err());
        assert!(RunConfig::parse("problem = \"f1d\"\ntheta_mode = \"sample:0\"").is_err());
        assert!(RunConfig::parse("problem = \"f1d\"\nconstraint_mode = \"maybe\"").is_err());
        assert!(RunConfig::parse("seed = 1").is_err());
        let mut big = RunConfig::for_problem("f1d");
        big.seed = u64::MAX;
        assert!(big.validate().is_err());
    }

    #[test]
    fn mode_strings_round_trip() {
        for s in ["map", "sample:1", "sample:12"] {
            assert_eq!(s.parse::<ThetaSetting>().unwrap().to_string(), s);
        }
        for m in [ConstraintMode::Surrogate, ConstraintMode::KnownIndicator, ConstraintMode::None] {
            assert_eq!(m.to_string().parse::<ConstraintMode>().unwrap(), m);
        }
    }
}
