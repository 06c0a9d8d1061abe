//! Per-country proxy endpoints.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::IngestError;

/// Countries probed for a block map when the caller names none.
pub const DEFAULT_BLOCK_MAP_COUNTRIES: [&str; 31] = [
    "AR", "AU", "BR", "CA", "CN", "DE", "EG", "ES", "FR", "GB", "ID", "IN", "IR", "IT", "JP", "KR",
    "MX", "NG", "NL", "PK", "PL", "RU", "SA", "SE", "SG", "TH", "TR", "UA", "US", "VN", "ZA",
];

/// The server's own location; fetches "via" it go direct.
pub const DEFAULT_LOCATION: &str = "DE";

pub const DEFAULT_QUORUM: usize = 3;

/// Country names used by the legacy `STW_<NAME>_PROXY` variables.
const LEGACY_NAMES: [(&str, &str); 4] = [("CHINA", "CN"), ("USA", "US"), ("UK", "GB"), ("RUSSIA", "RU")];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProxyEndpoint {
    /// No proxy: the server's own network location.
    Direct,
    /// HTTP proxy at `host:port`.
    Http(String),
}

impl ProxyEndpoint {
    pub fn parse(raw: &str) -> Result<Self, IngestError> {
        let raw = raw.trim();
        if raw.eq_ignore_ascii_case("direct") {
            return Ok(ProxyEndpoint::Direct);
        }
        let (host, port) = raw
            .rsplit_once(':')
            .ok_or_else(|| IngestError::Config(format!("proxy {raw:?} is not host:port")))?;
        if host.is_empty() || port.parse::<u16>().is_err() {
            return Err(IngestError::Config(format!("proxy {raw:?} is not host:port")));
        }
        Ok(ProxyEndpoint::Http(raw.to_string()))
    }
}

impl fmt::Display for ProxyEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProxyEndpoint::Direct => f.write_str("direct"),
            ProxyEndpoint::Http(addr) => f.write_str(addr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyRegistry {
    entries: BTreeMap<String, Vec<ProxyEndpoint>>,
    quorum_size: usize,
}

impl Default for ProxyRegistry {
    fn default() -> Self {
        let mut registry = Self {
            entries: BTreeMap::new(),
            quorum_size: DEFAULT_QUORUM,
        };
        registry.add(DEFAULT_LOCATION, ProxyEndpoint::Direct);
        registry
    }
}

fn normalize_country(code: &str) -> Result<String, IngestError> {
    let code = code.trim().to_ascii_uppercase();
    if code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase()) {
        Ok(code)
    } else {
        Err(IngestError::Config(format!("{code:?} is not an ISO 3166-1 alpha-2 code")))
    }
}

impl ProxyRegistry {
    pub fn new(quorum_size: usize) -> Result<Self, IngestError> {
        if quorum_size == 0 {
            return Err(IngestError::Config("quorum size must be at least 1".into()));
        }
        Ok(Self {
            quorum_size,
            ..Self::default()
        })
    }

    pub fn quorum_size(&self) -> usize {
        self.quorum_size
    }

    pub fn add(&mut self, country: &str, endpoint: ProxyEndpoint) {
        let country = country.to_ascii_uppercase();
        let list = self.entries.entry(country).or_default();
        if !list.contains(&endpoint) {
            list.push(endpoint);
        }
    }

    /// Replaces a country's endpoint list.
    pub fn set(&mut self, country: &str, endpoints: Vec<ProxyEndpoint>) -> Result<(), IngestError> {
        let country = normalize_country(country)?;
        if endpoints.is_empty() {
            return Err(IngestError::Config(format!("{country} needs at least one endpoint")));
        }
        self.entries.insert(country, endpoints);
        Ok(())
    }

    pub fn endpoints(&self, country: &str) -> Option<&[ProxyEndpoint]> {
        self.entries.get(&country.to_ascii_uppercase()).map(Vec::as_slice)
    }

    pub fn countries(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, country: &str) -> bool {
        self.entries.contains_key(&country.to_ascii_uppercase())
    }

    /// Reads `STW_<COUNTRY>_PROXY` variables. `<COUNTRY>` is an ISO code or one
    /// of the legacy names CHINA, USA, UK, RUSSIA; the value is one or more
    /// comma-separated `host:port` entries.
    pub fn load_env<I, K, V>(&mut self, vars: I) -> Result<(), IngestError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (key, value) in vars {
            let Some(name) = key
                .as_ref()
                .strip_prefix("STW_")
                .and_then(|k| k.strip_suffix("_PROXY"))
            else {
                continue;
            };
            let country = LEGACY_NAMES
                .iter()
                .find(|(legacy, _)| *legacy == name)
                .map(|(_, iso)| iso.to_string())
                .unwrap_or_else(|| name.to_string());
            let country = normalize_country(&country)?;
            for raw in value.as_ref().split(',').filter(|s| !s.trim().is_empty()) {
                self.add(&country, ProxyEndpoint::parse(raw)?);
            }
        }
        Ok(())
    }

    /// Reads a registry file: one `COUNTRY host:port` (or `COUNTRY direct`)
    /// per line; `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<(), IngestError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))?;
        self.load_str(&raw)
    }

    pub fn load_str(&mut self, raw: &str) -> Result<(), IngestError> {
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(country), Some(endpoint), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(IngestError::Config(format!(
                    "registry line {}: expected `COUNTRY host:port`",
                    lineno + 1
                )));
            };
            let country = normalize_country(country)?;
            self.add(&country, ProxyEndpoint::parse(endpoint)?);
        }
        Ok(())
    }
}
