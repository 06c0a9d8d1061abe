//! Runtime settings: an optional TOML file, then environment overrides.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::ingest::{ProxyRegistry, DEFAULT_QUORUM};
use crate::monitor::DEFAULT_SUBJECT_PREFIX;
use crate::store::DEFAULT_PAGE_SIZE;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{name}: {reason}")]
    Value { name: &'static str, reason: String },
}

/// Mail settings. Only carried through; delivery goes to the outbox file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct MailConfig {
    pub server: Option<String>,
    pub port: Option<u16>,
    pub use_tls: bool,
    pub username: Option<String>,
    pub password: Option<String>,
    pub sender: Option<String>,
    pub subject_prefix: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct Config {
    pub secret_key: Option<String>,
    pub server_url: String,
    pub bind: String,
    pub data_dir: PathBuf,
    /// Database file; defaults to `<data_dir>/stw.db`.
    pub database: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
    pub outbox: Option<PathBuf>,
    pub tsa_key: Option<PathBuf>,
    pub ledger_journal: Option<PathBuf>,
    pub anchor_url: Option<String>,
    pub anchor_token: Option<String>,
    pub proxy_file: Option<PathBuf>,
    pub proxies: HashMap<String, Vec<String>>,
    pub quorum: usize,
    pub geo_fixture: Option<PathBuf>,
    pub geo_url: Option<String>,
    pub admin_email: Option<String>,
    pub posts_per_page: u32,
    pub fetch_timeout_secs: u64,
    pub seal_interval_hours: u64,
    pub mail: MailConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            secret_key: None,
            server_url: "http://localhost:8080".into(),
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("stw-data"),
            database: None,
            snapshot_dir: None,
            outbox: None,
            tsa_key: None,
            ledger_journal: None,
            anchor_url: None,
            anchor_token: None,
            proxy_file: None,
            proxies: HashMap::new(),
            quorum: DEFAULT_QUORUM,
            geo_fixture: None,
            geo_url: None,
            admin_email: None,
            posts_per_page: DEFAULT_PAGE_SIZE,
            fetch_timeout_secs: 15,
            seal_interval_hours: 24,
            mail: MailConfig {
                subject_prefix: DEFAULT_SUBJECT_PREFIX.into(),
                ..MailConfig::default()
            },
        }
    }
}

impl Config {
    /// File values (if any), then the process environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_from(file, std::env::vars())
    }

    pub fn load_from<I>(file: Option<&Path>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut config = match file {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Read { path: path.into(), source })?;
                let mut config: Config =
                    toml::from_str(&raw).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
                if config.mail.subject_prefix.is_empty() {
                    config.mail.subject_prefix = DEFAULT_SUBJECT_PREFIX.into();
                }
                config
            }
            None => Config::default(),
        };
        config.apply_env(env)?;
        Ok(config)
    }

    fn apply_env<I>(&mut self, env: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, value) in env {
            let v = value.trim().to_string();
            match key.as_str() {
                "SECRET_KEY" => self.secret_key = Some(v),
                "SERVER_URL" => self.server_url = v,
                "STW_BIND" => self.bind = v,
                "STW_DATA_DIR" => self.data_dir = v.into(),
                "DEV_DATABASE_URL" | "DATABASE_URL" => self.database = Some(database_path(&v)),
                "STW_SNAPSHOT_DIR" => self.snapshot_dir = Some(v.into()),
                "STW_OUTBOX" => self.outbox = Some(v.into()),
                "STW_TSA_KEY" => self.tsa_key = Some(v.into()),
                "STW_LEDGER_JOURNAL" => self.ledger_journal = Some(v.into()),
                "STW_ANCHOR_URL" => self.anchor_url = Some(v),
                "STW_ANCHOR_TOKEN" => self.anchor_token = Some(v),
                "STW_PROXY_FILE" => self.proxy_file = Some(v.into()),
                "STW_PROXY_QUORUM" => self.quorum = parse_num("STW_PROXY_QUORUM", &v)?,
                "STW_GEO_FIXTURE" => self.geo_fixture = Some(v.into()),
                "STW_GEO_URL" => self.geo_url = Some(v),
                "STW_ADMIN" => self.admin_email = Some(v),
                "STW_POSTS_PER_PAGE" => self.posts_per_page = parse_num("STW_POSTS_PER_PAGE", &v)?,
                "STW_FETCH_TIMEOUT" => self.fetch_timeout_secs = parse_num("STW_FETCH_TIMEOUT", &v)?,
                "STW_SEAL_INTERVAL_HOURS" => self.seal_interval_hours = parse_num("STW_SEAL_INTERVAL_HOURS", &v)?,
                "MAIL_SERVER" => self.mail.server = Some(v),
                "MAIL_PORT" => self.mail.port = Some(parse_num("MAIL_PORT", &v)?),
                "MAIL_USE_TLS" => self.mail.use_tls = matches!(v.to_ascii_lowercase().as_str(), "1" | "true" | "yes" | "on"),
                "MAIL_USERNAME" => self.mail.username = Some(v),
                "MAIL_PASSWORD" => self.mail.password = Some(v),
                "STW_MAIL_SENDER" => self.mail.sender = Some(v),
                "STW_MAIL_SUBJECT_PREFIX" => self.mail.subject_prefix = v,
                k if k.starts_with("STW_") && k.ends_with("_PROXY") => {
                    self.proxies.insert(k.to_string(), vec![v]);
                }
                _ => {}
            }
        }
        if self.posts_per_page == 0 {
            return Err(ConfigError::Value { name: "STW_POSTS_PER_PAGE", reason: "must be at least 1".into() });
        }
        if self.quorum == 0 {
            return Err(ConfigError::Value { name: "STW_PROXY_QUORUM", reason: "must be at least 1".into() });
        }
        Ok(())
    }

    pub fn database_path(&self) -> PathBuf {
        self.database.clone().unwrap_or_else(|| self.data_dir.join("stw.db"))
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.snapshot_dir.clone().unwrap_or_else(|| self.data_dir.join("snapshots"))
    }

    pub fn outbox_path(&self) -> PathBuf {
        self.outbox.clone().unwrap_or_else(|| self.data_dir.join("outbox.ndjson"))
    }

    pub fn tsa_key_path(&self) -> PathBuf {
        self.tsa_key.clone().unwrap_or_else(|| self.data_dir.join("tsa_key.json"))
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.ledger_journal.clone().unwrap_or_else(|| self.data_dir.join("ledger.log"))
    }

    pub fn fetch_timeout(&self) -> Duration {
        Duration::from_secs(self.fetch_timeout_secs.max(1))
    }

    /// Default registry, then the proxy file, then proxy variables.
    pub fn proxy_registry(&self) -> Result<ProxyRegistry, crate::ingest::IngestError> {
        let mut registry = ProxyRegistry::new(self.quorum)?;
        if let Some(path) = &self.proxy_file {
            registry.load_file(path)?;
        }
        let mut vars: Vec<(String, String)> = self
            .proxies
            .iter()
            .map(|(k, v)| {
                let key = if k.starts_with("STW_") { k.clone() } else { format!("STW_{}_PROXY", k.to_ascii_uppercase()) };
                (key, v.join(","))
            })
            .collect();
        vars.sort();
        registry.load_env(vars)?;
        Ok(registry)
    }
}

fn parse_num<T: std::str::FromStr>(name: &'static str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::Value { name, reason: e.to_string() })
}

/// Accepts a bare path or a `sqlite:///path` URL.
fn database_path(raw: &str) -> PathBuf {
    let stripped = raw
        .strip_prefix("sqlite:///")
        .map(|p| format!("/{p}"))
        .or_else(|| raw.strip_prefix("sqlite://").map(str::to_string))
        .unwrap_or_else(|| raw.to_string());
    PathBuf::from(stripped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults() {
        let c = Config::load_from(None, Vec::new()).unwrap();
        assert_eq!(c.posts_per_page, 20);
        assert_eq!(c.mail.subject_prefix, "[StampTheWeb]");
        assert_eq!(c.quorum, 3);
        assert_eq!(c.database_path(), PathBuf::from("stw-data/stw.db"));
    }

    #[test]
    fn env_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("stw.toml");
        std::fs::write(&file, "posts_per_page = 5\nserver_url = \"http://file\"\n[mail]\nsubject_prefix = \"[F]\"\n").unwrap();
        let c = Config::load_from(Some(&file), env(&[("SERVER_URL", "http://env"), ("DEV_DATABASE_URL", "sqlite:////tmp/x.db")])).unwrap();
        assert_eq!(c.posts_per_page, 5);
        assert_eq!(c.server_url, "http://env");
        assert_eq!(c.mail.subject_prefix, "[F]");
        assert_eq!(c.database_path(), PathBuf::from("/tmp/x.db"));
    }

    #[test]
    fn proxy_variables_reach_registry() {
        let c = Config::load_from(None, env(&[("STW_CHINA_PROXY", "10.0.0.1:3128,10.0.0.2:3128")])).unwrap();
        let registry = c.proxy_registry().unwrap();
        assert_eq!(registry.endpoints("CN").unwrap().len(), 2);
        assert!(Config::load_from(None, env(&[("STW_POSTS_PER_PAGE", "0")])).is_err());
    }
}
