//! Flat key=value scenario configuration with `[section]` headers. Strict:
//! unknown sections or keys are errors, so typos cannot silently fall back
//! to defaults.

use std::collections::BTreeMap;
use std::path::Path;

use bfsim_core::attacker::StrategySpec;
use bfsim_core::crypto::ModelParams;
use bfsim_core::ledger::ChainConfig;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {0}: expected `key = value` or `[section]`")]
    BadLine(usize),
    #[error("line {line}: unknown key {key:?} in section [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: {key} = {value:?} is not a valid {expected}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Raw parse result: section -> key -> (line, value).
struct RawConfig {
    entries: BTreeMap<(String, String), (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.split_once('#') {
                Some((before, _)) => before.trim(),
                None => raw_line.trim(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let Some(name) = inner.strip_suffix(']') else {
                    return Err(ConfigError::BadLine(line_no));
                };
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(line_no));
            };
            entries.insert(
                (section.clone(), key.trim().to_string()),
                (line_no, value.trim().to_string()),
            );
        }
        Ok(RawConfig { entries })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }
}

fn parse_value<T: std::str::FromStr>(
    entry: Option<(usize, String)>,
    key: &str,
    expected: &'static str,
    default: T,
) -> Result<T, ConfigError> {
    match entry {
        None => Ok(default),
        Some((line, value)) => value.parse().map_err(|_| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value,
            expected,
        }),
    }
}

fn parse_opt<T: std::str::FromStr>(
    entry: Option<(usize, String)>,
    key: &str,
    expected: &'static str,
) -> Result<Option<T>, ConfigError> {
    match entry {
        None => Ok(None),
        Some((line, value)) => value.parse().map(Some).map_err(|_| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value,
            expected,
        }),
    }
}

/// Everything a simulation run depends on. `to_canonical_json` is the
/// reproducibility anchor: two runs agree iff these bytes agree.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub b_sec: u32,
    pub b_addr: u32,
    pub digest_bits: u32,
    pub funding_count: usize,
    pub funding_value: u64,
    pub strategy: String,
    pub attack_count: u64,
    pub attack_start: u128,
    pub workers: usize,
    pub stop_after_hits: Option<u64>,
    pub timeout: u64,
    pub subsidy: Option<u64>,
    pub seed: u64,
    pub enable_evidence_consensus: bool,
    pub reward_output: Option<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            b_sec: 32,
            b_addr: 16,
            digest_bits: 32,
            funding_count: 64,
            funding_value: 10,
            strategy: "random".to_string(),
            attack_count: 1 << 18,
            attack_start: 0,
            workers: 4,
            stop_after_hits: None,
            timeout: 6,
            subsidy: None,
            seed: 7,
            enable_evidence_consensus: true,
            reward_output: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(text)?;
        let d = ScenarioConfig::default();
        let cfg = ScenarioConfig {
            b_sec: parse_value(raw.take("params", "b_sec"), "b_sec", "integer", d.b_sec)?,
            b_addr: parse_value(raw.take("params", "b_addr"), "b_addr", "integer", d.b_addr)?,
            digest_bits: parse_value(
                raw.take("params", "digest_bits"),
                "digest_bits",
                "integer",
                d.digest_bits,
            )?,
            funding_count: parse_value(
                raw.take("funding", "count"),
                "count",
                "integer",
                d.funding_count,
            )?,
            funding_value: parse_value(
                raw.take("funding", "value"),
                "value",
                "integer",
                d.funding_value,
            )?,
            strategy: match raw.take("attack", "strategy") {
                Some((_, v)) => v,
                None => d.strategy,
            },
            attack_count: parse_value(
                raw.take("attack", "count"),
                "count",
                "integer",
                d.attack_count,
            )?,
            attack_start: parse_value(raw.take("attack", "start"), "start", "integer", d.attack_start)?,
            workers: parse_value(raw.take("attack", "workers"), "workers", "integer", d.workers)?,
            stop_after_hits: parse_opt(
                raw.take("attack", "stop_after_hits"),
                "stop_after_hits",
                "integer",
            )?,
            timeout: parse_value(raw.take("chain", "timeout"), "timeout", "integer", d.timeout)?,
            subsidy: parse_opt(raw.take("chain", "subsidy"), "subsidy", "integer")?,
            seed: parse_value(raw.take("scenario", "seed"), "seed", "integer", d.seed)?,
            enable_evidence_consensus: parse_value(
                raw.take("scenario", "enable_evidence_consensus"),
                "enable_evidence_consensus",
                "boolean",
                d.enable_evidence_consensus,
            )?,
            reward_output: parse_opt(
                raw.take("scenario", "reward_output"),
                "reward_output",
                "integer",
            )?,
        };
        if let Some(((section, key), (line, _))) = raw.entries.into_iter().next() {
            return Err(ConfigError::UnknownKey { line, section, key });
        }
        Ok(cfg)
    }

    /// Builds the validated model parameters, or a config error.
    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        ModelParams::new(self.b_sec, self.b_addr)
            .and_then(|p| p.with_digest_bits(self.digest_bits))
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Genesis needs one coinbase covering all seeded outputs, so the
    /// default subsidy is exactly that sum.
    pub fn effective_subsidy(&self) -> u64 {
        let need = self.funding_value * self.funding_count as u64
            + self.reward_output.unwrap_or(0);
        self.subsidy.unwrap_or(need)
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            subsidy: self.effective_subsidy(),
            timeout: self.timeout,
        }
    }

    pub fn strategy_spec(&self) -> Result<StrategySpec, ConfigError> {
        bfsim_core::attacker::spec_from_name(
            &self.strategy,
            self.attack_start,
            self.seed,
            self.attack_count,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params()?;
        self.strategy_spec()?;
        if self.funding_count == 0 {
            return Err(ConfigError::Invalid("funding count must be positive".into()));
        }
        if self.funding_value == 0 {
            return Err(ConfigError::Invalid("funding value must be positive".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be positive".into()));
        }
        if self.funding_count as u64 > 1 << self.b_addr.min(40) {
            return Err(ConfigError::Invalid(
                "funding count exceeds the address space".into(),
            ));
        }
        if let Some(subsidy) = self.subsidy {
            let need =
                self.funding_value * self.funding_count as u64 + self.reward_output.unwrap_or(0);
            if subsidy < need {
                return Err(ConfigError::Invalid(format!(
                    "subsidy {subsidy} cannot fund the {need} needed at genesis"
                )));
            }
        }
        Ok(())
    }

    /// Sorted-key JSON of every effective knob; hashed into the report.
    pub fn to_canonical_json(&self) -> serde_json::Value {
        json!({
            "attack": {
                "count": self.attack_count,
                "start": self.attack_start.to_string(),
                "stop_after_hits": self.stop_after_hits,
                "strategy": self.strategy,
                "workers": self.workers,
            },
            "chain": {
                "subsidy": self.effective_subsidy(),
                "timeout": self.timeout,
            },
            "funding": {
                "count": self.funding_count,
                "value": self.funding_value,
            },
            "params": {
                "b_addr": self.b_addr,
                "b_sec": self.b_sec,
                "digest_bits": self.digest_bits,
            },
            "scenario": {
                "enable_evidence_consensus": self.enable_evidence_consensus,
                "reward_output": self.reward_output,
                "seed": self.seed,
            },
        })
    }

    pub fn hash_hex(&self) -> String {
        let text = self.to_canonical_json().to_string();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
