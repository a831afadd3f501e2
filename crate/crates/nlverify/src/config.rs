//! Run configuration: defaults, a TOML file, `NLVERIFY_*` environment
//! variables and command-line flags, later layers winning in that order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nlverify_core::prompt::DEFAULT_BASELINE_BUDGET;
use nlverify_core::CacheMode;
use serde::Serialize;

use crate::provider::ProviderConfig;

pub const CONFIG_ENV: &str = "NLVERIFY_CONFIG";
pub const ENV_PREFIX: &str = "NLVERIFY_";

/// Every settable key, in documentation order.
pub const KEYS: &[&str] = &[
    "provider",
    "endpoint",
    "model",
    "api_key_env",
    "temperature",
    "max_retries",
    "timeout",
    "max_inflight",
    "block_budget",
    "fixpoint_bound",
    "baseline_budget",
    "store",
    "templates",
    "entry",
    "log_level",
    "cache_mode",
    "preprocess",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Rule,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub provider_kind: ProviderKind,
    pub provider: ProviderConfig,
    /// Function bodies longer than this many characters are summarized block-wise.
    pub block_budget: usize,
    pub fixpoint_bound: u32,
    /// Character budget of the whole-program prompt.
    pub baseline_budget: usize,
    pub store: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub entry: String,
    pub log_level: String,
    pub cache_mode: CacheMode,
    pub preprocess: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            provider_kind: ProviderKind::Rule,
            provider: ProviderConfig::default(),
            block_budget: 24_000,
            fixpoint_bound: 3,
            baseline_budget: DEFAULT_BASELINE_BUDGET,
            store: None,
            templates: None,
            entry: "main".into(),
            log_level: "warn".into(),
            cache_mode: CacheMode::None,
            preprocess: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config key `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { key: key.into(), message: message.into() }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim().parse().map_err(|_| bad(key, format!("`{v}` is not a valid number")))
}

fn non_negative(key: &str, v: &str) -> Result<u64, ConfigError> {
    let n: i64 = num(key, v)?;
    u64::try_from(n).map_err(|_| bad(key, format!("must be non-negative, got {n}")))
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "provider" => {
                self.provider_kind = match v {
                    "rule" => ProviderKind::Rule,
                    "http" => ProviderKind::Http,
                    _ => return Err(bad(key, format!("expected `rule` or `http`, got `{v}`"))),
                }
            }
            "endpoint" => self.provider.endpoint = v.into(),
            "model" => self.provider.model = v.into(),
            "api_key_env" => self.provider.api_key_env = v.into(),
            "temperature" => {
                let t: f64 = num(key, v)?;
                if !t.is_finite() || t < 0.0 {
                    return Err(bad(key, "must be a non-negative number"));
                }
                self.provider.temperature = t;
            }
            "max_retries" => self.provider.max_retries = u32::try_from(non_negative(key, v)?).map_err(|_| bad(key, "too large"))?,
            "timeout" => {
                let t = non_negative(key, v)?;
                if t == 0 {
                    return Err(bad(key, "must be positive"));
                }
                self.provider.timeout = t;
            }
            "max_inflight" => {
                let n = non_negative(key, v)?;
                if n == 0 {
                    return Err(bad(key, "must be at least 1"));
                }
                self.provider.max_inflight = n as usize;
            }
            "block_budget" | "baseline_budget" => {
                let n = non_negative(key, v)?;
                if n == 0 {
                    return Err(bad(key, "must be positive"));
                }
                if key == "block_budget" {
                    self.block_budget = n as usize;
                } else {
                    self.baseline_budget = n as usize;
                }
            }
            "fixpoint_bound" => {
                let n = non_negative(key, v)?;
                if n == 0 {
                    return Err(bad(key, "must be at least 1"));
                }
                self.fixpoint_bound = u32::try_from(n).map_err(|_| bad(key, "too large"))?;
            }
            "store" => self.store = (!v.is_empty()).then(|| PathBuf::from(v)),
            "templates" => self.templates = (!v.is_empty()).then(|| PathBuf::from(v)),
            "entry" => {
                if v.is_empty() {
                    return Err(bad(key, "must name a function"));
                }
                self.entry = v.into();
            }
            "log_level" => {
                if !matches!(v, "off" | "error" | "warn" | "info" | "debug" | "trace") {
                    return Err(bad(key, format!("unknown level `{v}`")));
                }
                self.log_level = v.into();
            }
            "cache_mode" => self.cache_mode = v.parse().map_err(|_| bad(key, format!("expected none, instructions or source, got `{v}`")))?,
            "preprocess" => {
                self.preprocess = match v {
                    "on" | "true" | "1" | "yes" => true,
                    "off" | "false" | "0" | "no" => false,
                    _ => return Err(bad(key, format!("expected on or off, got `{v}`"))),
                }
            }
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }
}

/// Flat `key = value` pairs from a TOML config file.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| bad("config", e.message().to_string()))?;
    let mut out = BTreeMap::new();
    for (k, v) in table {
        let s = match v {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            _ => return Err(bad(&k, "must be a string, number or boolean")),
        };
        if !KEYS.contains(&k.as_str()) {
            return Err(bad(&k, "unknown key"));
        }
        out.insert(k, s);
    }
    Ok(out)
}

/// Settings from `NLVERIFY_<KEY>` variables, looked up through `env`.
pub fn env_settings(env: &dyn Fn(&str) -> Option<String>) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|k| env(&format!("{ENV_PREFIX}{}", k.to_ascii_uppercase())).map(|v| (k.to_string(), v)))
        .collect()
}

/// Build the effective configuration. `file` is the config path when one
/// was given by flag or by `NLVERIFY_CONFIG`.
pub fn load_config(file: Option<&Path>, env: &dyn Fn(&str) -> Option<String>, flags: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    // merge first so a value overridden by a later layer is never validated
    let mut merged = BTreeMap::new();
    let env_file = env(CONFIG_ENV).filter(|s| !s.is_empty()).map(PathBuf::from);
    if let Some(path) = file.map(Path::to_path_buf).or(env_file) {
        merged.extend(read_config_file(&path)?);
    }
    merged.extend(env_settings(env));
    merged.extend(flags.iter().cloned());
    let mut cfg = RunConfig::default();
    for (k, v) in &merged {
        cfg.set(k, v)?;
    }
    log::debug!("effective config: {}", serde_json::to_string(&cfg).unwrap_or_default());
    Ok(cfg)
}
