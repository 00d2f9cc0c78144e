//! Service configuration: one TOML file plus `SOCIAL_MIRROR_*` environment
//! overrides.

use std::path::{Path, PathBuf};

use mirror_core::ideology::DEFAULT_LABEL_THRESHOLD;
use mirror_core::layout::LayoutConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "SOCIAL_MIRROR_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("environment variable {name}={value:?} is not a valid {expected}")]
    Env { name: String, value: String, expected: &'static str },
    #[error("invalid setting: {0}")]
    Invalid(String),
}

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// `idA,idB` mutual-follow pairs.
    pub edges: PathBuf,
    /// `id,p_left` classifier output.
    pub ideology: PathBuf,
    /// `domain,alignment` table.
    pub alignment: PathBuf,
    /// Optional `id,text` tweet corpus for hover display.
    pub tweets: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataPaths,
    /// Ingest output, one subdirectory per input digest.
    pub cache_dir: PathBuf,
    /// Event journal, state snapshots, recommendation audit log.
    pub store_dir: PathBuf,
    pub sample_size: usize,
    pub core_k: usize,
    pub rng_seed: u64,
    pub bind: String,
    pub port: u16,
    pub label_threshold: f64,
    pub max_recommendations: usize,
    /// Key for signing session tokens.
    pub token_secret: String,
    /// Bearer token for `/api/admin/*`.
    pub admin_token: String,
    /// Seconds between state snapshots while serving.
    pub snapshot_interval_secs: u64,
    pub layout: LayoutConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            cache_dir: PathBuf::from("cache"),
            store_dir: PathBuf::from("store"),
            sample_size: 900,
            core_k: 4,
            rng_seed: 0,
            bind: "127.0.0.1".into(),
            port: 8080,
            label_threshold: DEFAULT_LABEL_THRESHOLD,
            max_recommendations: mirror_core::recommender::DEFAULT_MAX_RECOMMENDATIONS,
            token_secret: String::new(),
            admin_token: String::new(),
            snapshot_interval_secs: 60,
            layout: LayoutConfig::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(name: &str, value: String, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Env { name: name.into(), value, expected })
}

impl Config {
    /// Reads `path`, applies environment overrides, resolves relative paths
    /// and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        config.apply_env(std::env::vars())?;
        if let Some(base) = path.parent() {
            config.resolve_relative(base);
        }
        config.validate()?;
        Ok(config)
    }

    /// Overrides from `SOCIAL_MIRROR_*` variables, e.g. `SOCIAL_MIRROR_PORT`
    /// or `SOCIAL_MIRROR_DATA_EDGES`.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (name, value) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            match key {
                "DATA_EDGES" => self.data.edges = value.into(),
                "DATA_IDEOLOGY" => self.data.ideology = value.into(),
                "DATA_ALIGNMENT" => self.data.alignment = value.into(),
                "DATA_TWEETS" => self.data.tweets = Some(value.into()),
                "CACHE_DIR" => self.cache_dir = value.into(),
                "STORE_DIR" => self.store_dir = value.into(),
                "SAMPLE_SIZE" => self.sample_size = parse_env(&name, value, "integer")?,
                "CORE_K" => self.core_k = parse_env(&name, value, "integer")?,
                "RNG_SEED" => self.rng_seed = parse_env(&name, value, "integer")?,
                "BIND" => self.bind = value,
                "PORT" => self.port = parse_env(&name, value, "port")?,
                "LAYOUT_SEED" => self.layout.seed = parse_env(&name, value, "integer")?,
                "TOKEN_SECRET" => self.token_secret = value,
                "ADMIN_TOKEN" => self.admin_token = value,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.edges);
        fix(&mut self.data.ideology);
        fix(&mut self.data.alignment);
        if let Some(t) = self.data.tweets.as_mut() {
            fix(t);
        }
        fix(&mut self.cache_dir);
        fix(&mut self.store_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sample_size == 0 {
            return Err(ConfigError::Invalid("sample_size must be at least 1".into()));
        }
        if self.core_k == 0 {
            return Err(ConfigError::Invalid("core_k must be at least 1".into()));
        }
        if !(self.label_threshold > 0.5 && self.label_threshold <= 1.0) {
            return Err(ConfigError::Invalid("label_threshold must be in (0.5, 1]".into()));
        }
        self.layout.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn journal_path(&self) -> PathBuf {
        self.store_dir.join("events.ndjson")
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.store_dir.join("state.json")
    }

    pub fn audit_log_path(&self) -> PathBuf {
        self.store_dir.join("recommendations.csv")
    }
}
