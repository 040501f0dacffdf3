//! Service configuration: an optional TOML file, then `ANAMNESIS_*`
//! environment variables, then command-line flags (applied by the caller).

use std::path::{Path, PathBuf};

use anamnesis_core::nlg::EngineVariant;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Knowledge base file; the bundled clinic KB when unset.
    pub kb: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Trained emotion classifier. Without one, sessions default to no emotes.
    pub model: Option<PathBuf>,
    /// Append-only event journal; sessions are restored from it on start.
    pub journal: Option<PathBuf>,
    /// Rating records, one JSON object per line.
    pub ratings: Option<PathBuf>,
    pub seed: u64,
    pub variant: EngineVariant,
    pub max_questions: usize,
    pub margin_threshold: f64,
    pub external: ExternalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalConfig {
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            timeout_ms: 5000,
        }
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            kb: None,
            bank: None,
            lexicon: None,
            model: None,
            journal: None,
            ratings: None,
            seed: 0,
            variant: EngineVariant::Full,
            max_questions: 10,
            margin_threshold: 20.0,
            external: ExternalConfig::default(),
        }
    }
}

fn parsed<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Env {
        name: name.to_string(),
        message: e.to_string(),
    })
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Overrides fields from `ANAMNESIS_*` variables looked up through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let get = |suffix: &str| {
            let name = format!("ANAMNESIS_{suffix}");
            var(&name).map(|v| (name, v))
        };
        if let Some((_, v)) = get("BIND") {
            self.bind = v;
        }
        if let Some((n, v)) = get("PORT") {
            self.port = parsed(&n, &v)?;
        }
        for (suffix, slot) in [
            ("KB", &mut self.kb),
            ("BANK", &mut self.bank),
            ("LEXICON", &mut self.lexicon),
            ("MODEL", &mut self.model),
            ("JOURNAL", &mut self.journal),
            ("RATINGS", &mut self.ratings),
        ] {
            if let Some((_, v)) = get(suffix) {
                *slot = Some(PathBuf::from(v));
            }
        }
        if let Some((n, v)) = get("SEED") {
            self.seed = parsed(&n, &v)?;
        }
        if let Some((n, v)) = get("VARIANT") {
            self.variant = parsed(&n, &v)?;
        }
        if let Some((n, v)) = get("MAX_QUESTIONS") {
            self.max_questions = parsed(&n, &v)?;
        }
        if let Some((n, v)) = get("MARGIN_THRESHOLD") {
            self.margin_threshold = parsed(&n, &v)?;
        }
        if let Some((_, v)) = get("EXTERNAL_ENDPOINT") {
            self.external.endpoint = Some(v);
        }
        if let Some((n, v)) = get("EXTERNAL_TIMEOUT_MS") {
            self.external.timeout_ms = parsed(&n, &v)?;
        }
        Ok(())
    }
}
