//! Run configuration: one flat JSON object, every key overridable through an
//! environment variable named `CALLERKIT_<KEY>` (upper-cased).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::TargetPolicy;
use crate::error::{Error, Result};
use crate::eval::{Backend, Limits, Sandbox};
use crate::ingest::FilterPolicy;

pub const ENV_PREFIX: &str = "CALLERKIT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub min_stars: u64,
    pub recency_months: u32,
    /// Reference date for the recency window (ISO date). Defaults to today.
    pub as_of: Option<String>,
    pub min_files: usize,
    pub excluded_domains: Vec<String>,
    pub assert_density: f64,
    pub require_docstring: bool,
    pub length_tolerance: f64,
    pub timeout_s: f64,
    pub memory_mb: u64,
    pub workers: usize,
    pub backend: String,
    pub container_image: String,
    pub python: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cache_dir: PathBuf::from(".callerkit-cache"),
            output_dir: PathBuf::from("out"),
            min_stars: 100,
            recency_months: 24,
            as_of: None,
            min_files: 2,
            excluded_domains: vec![
                "algorithmic".into(),
                "competitive-programming".into(),
                "tutorial".into(),
                "leetcode".into(),
                "exercises".into(),
            ],
            assert_density: 0.3,
            require_docstring: true,
            length_tolerance: 0.1,
            timeout_s: 10.0,
            memory_mb: 512,
            workers: 4,
            backend: "proc".into(),
            container_image: "python:3.11-slim".into(),
            python: "python3".into(),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Load from an optional JSON file, then apply environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let env: BTreeMap<String, String> = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        Self::load_with_env(path, &env)
    }

    pub fn load_with_env(path: Option<&Path>, env: &BTreeMap<String, String>) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let Value::Object(entries) = file else {
                return Err(Error::Config(format!("{}: expected a JSON object", p.display())));
            };
            let obj = value.as_object_mut().expect("config serializes to an object");
            for (k, v) in entries {
                if v.is_object() {
                    return Err(Error::Config(format!("{k}: nested objects are not allowed")));
                }
                obj.insert(k, v);
            }
        }
        let obj = value.as_object_mut().expect("config serializes to an object");
        let keys: Vec<String> = obj.keys().cloned().collect();
        for key in keys {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            let Some(raw) = env.get(&var) else { continue };
            let current = &obj[&key];
            obj.insert(key.clone(), env_value(current, raw));
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(
            (0.0..=1.0).contains(&self.assert_density),
            "assert_density must lie in [0, 1]",
        )?;
        check(
            (0.0..1.0).contains(&self.length_tolerance),
            "length_tolerance must lie in [0, 1)",
        )?;
        check(self.timeout_s > 0.0, "timeout_s must be positive")?;
        check(self.memory_mb >= 16, "memory_mb must be at least 16")?;
        check(self.workers >= 1, "workers must be at least 1")?;
        check(self.min_files >= 1, "min_files must be at least 1")?;
        check(self.recency_months >= 1, "recency_months must be at least 1")?;
        check(
            matches!(self.backend.as_str(), "proc" | "container"),
            "backend must be proc or container",
        )?;
        if let Some(d) = &self.as_of {
            chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|_| Error::Config(format!("as_of: not an ISO date: {d}")))?;
        }
        Ok(())
    }

    pub fn filter_policy(&self) -> FilterPolicy {
        let as_of = self
            .as_of
            .as_deref()
            .and_then(|d| chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
            .unwrap_or_else(|| chrono::Utc::now().date_naive());
        FilterPolicy {
            min_stars: self.min_stars,
            recency_months: self.recency_months,
            as_of,
            min_files: self.min_files,
            excluded_domains: self.excluded_domains.clone(),
        }
    }

    pub fn target_policy(&self) -> TargetPolicy {
        TargetPolicy {
            require_docstring: self.require_docstring,
            assert_density: self.assert_density,
        }
    }

    pub fn sandbox(&self) -> Sandbox {
        Sandbox {
            backend: match self.backend.as_str() {
                "container" => Backend::Container {
                    image: self.container_image.clone(),
                },
                _ => Backend::Proc,
            },
            limits: Limits {
                wall_s: self.timeout_s,
                mem_mb: self.memory_mb,
                no_network: true,
            },
            python: self.python.clone(),
        }
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config is serializable");
        hex::encode(Sha256::digest(&canonical))
    }
}

fn env_value(current: &Value, raw: &str) -> Value {
    match current {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) => match serde_json::from_str::<Value>(raw) {
            Ok(v @ Value::Array(_)) => v,
            _ => Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Value::String(s.to_string()))
                    .collect(),
            ),
        },
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    }
}
