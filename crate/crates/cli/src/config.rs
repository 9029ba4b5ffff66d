//! Run configuration: flags override the config file, which overrides the
//! environment, which overrides built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use t3kit_core::provider::{Backend, ProviderConfig};

pub const ENV_SEED: &str = "T3KIT_SEED";
pub const ENV_PROVIDER: &str = "T3KIT_PROVIDER";

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub provider: Option<ProviderConfig>,
    /// Directory of prompt template overrides.
    pub prompts: Option<PathBuf>,
    /// Free-form per-command defaults, e.g. `[generate] count = 100`.
    #[serde(flatten)]
    pub sections: BTreeMap<String, toml::Value>,
}

/// Command sections a config file may carry.
pub const SECTIONS: [&str; 10] = [
    "ingest",
    "generate",
    "verify",
    "stats",
    "split",
    "mix",
    "emit",
    "score",
    "probe",
    "demo-corpus",
];

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: FileConfig = toml::from_str(text)?;
        for (name, value) in &cfg.sections {
            if !SECTIONS.contains(&name.as_str()) {
                bail!("unknown config key {name:?}");
            }
            if !value.is_table() {
                bail!("[{name}] must be a table");
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &mut cfg.prompts {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// A value from a command section, e.g. `section("generate", "count")`.
    pub fn section_value(&self, section: &str, key: &str) -> Option<&toml::Value> {
        self.sections.get(section)?.get(key)
    }

    pub fn section_u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        match self.section_value(section, key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(other) => bail!("[{section}] {key} must be a non-negative integer, got {other}"),
        }
    }

    pub fn section_str(&self, section: &str, key: &str) -> Result<Option<String>> {
        match self.section_value(section, key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => bail!("[{section}] {key} must be a string, got {other}"),
        }
    }
}

/// Seed from the flag, else the config file, else `T3KIT_SEED`, else 0.
pub fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    if let Some(s) = flag.or(file.seed) {
        return Ok(s);
    }
    match std::env::var(ENV_SEED) {
        Ok(v) if !v.is_empty() => v.parse().with_context(|| format!("{ENV_SEED}={v:?} is not an integer")),
        _ => Ok(0),
    }
}

/// Provider settings. `choice` is `mock`, `http`, or a TOML file holding a
/// provider table; without a flag the config file's `[provider]` table is
/// used, then `T3KIT_PROVIDER`, then the mock.
pub fn resolve_provider(
    choice: Option<&str>,
    endpoint: Option<&str>,
    model: Option<&str>,
    file: &FileConfig,
    seed: u64,
) -> Result<ProviderConfig> {
    let from_choice = |c: &str| -> Result<ProviderConfig> {
        Ok(match c {
            "mock" => ProviderConfig::mock(seed),
            "http" => ProviderConfig {
                backend: Backend::Http,
                ..file.provider.clone().unwrap_or_else(|| ProviderConfig::mock(seed))
            },
            path => {
                let text = fs::read_to_string(path).with_context(|| format!("reading provider config {path}"))?;
                toml::from_str(&text).with_context(|| format!("parsing provider config {path}"))?
            }
        })
    };
    let mut cfg = match choice {
        Some(c) => from_choice(c)?,
        None => match &file.provider {
            Some(p) => p.clone(),
            None => match std::env::var(ENV_PROVIDER) {
                Ok(v) if !v.is_empty() => from_choice(&v)?,
                _ => ProviderConfig::mock(seed),
            },
        },
    };
    if let Some(e) = endpoint {
        cfg.endpoint = Some(e.to_string());
    }
    if let Some(m) = model {
        cfg.model = Some(m.to_string());
    }
    if cfg.backend == Backend::Http {
        cfg.fill_from_env();
    }
    Ok(cfg)
}

/// Hash of the resolved settings, recorded next to every output.
pub fn config_hash<T: Serialize>(resolved: &T) -> String {
    let bytes = serde_json::to_vec(resolved).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
