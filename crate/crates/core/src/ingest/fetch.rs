//! HTTP transport. Network failures are data, never errors.

use std::io::{self, Read};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::proxy::{ProxyEndpoint, ProxyRegistry};
use super::IngestError;
use crate::clock::Clock;
use crate::time::{self, Instant};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(15);
const MAX_BODY: u64 = 32 * 1024 * 1024;
const USER_AGENT: &str = concat!("stw/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "code", rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    HttpError(u16),
    Unreachable,
    Timeout,
}

impl FetchStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, FetchStatus::Ok)
    }

    fn is_transient(&self) -> bool {
        matches!(self, FetchStatus::Unreachable | FetchStatus::Timeout)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchResult {
    pub url: String,
    pub status: FetchStatus,
    #[serde(skip)]
    pub body: Vec<u8>,
    pub declared_encoding: Option<String>,
    #[serde(with = "time::serde_secs")]
    pub fetched_at: Instant,
    pub via_country: Option<String>,
}

/// Validates scheme and syntax; the only error path of a fetch.
pub fn parse_fetch_url(raw: &str) -> Result<Url, IngestError> {
    let url = Url::parse(raw.trim()).map_err(|e| IngestError::InvalidUrl(format!("{raw}: {e}")))?;
    match url.scheme() {
        "http" | "https" if url.host_str().is_some() => Ok(url),
        _ => Err(IngestError::InvalidUrl(format!("{raw}: only http(s) URLs with a host"))),
    }
}

pub struct Fetcher {
    timeout: Duration,
    direct_retries: u32,
    clock: Arc<dyn Clock>,
}

impl Fetcher {
    pub fn new(timeout: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            timeout,
            direct_retries: 1,
            clock,
        }
    }

    pub fn with_direct_retries(mut self, retries: u32) -> Self {
        self.direct_retries = retries;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn fetch(&self, url: &str) -> Result<FetchResult, IngestError> {
        let parsed = parse_fetch_url(url)?;
        let mut result = self.attempt(&parsed, &ProxyEndpoint::Direct);
        for _ in 0..self.direct_retries {
            if !result.status.is_transient() {
                break;
            }
            result = self.attempt(&parsed, &ProxyEndpoint::Direct);
        }
        Ok(result)
    }

    /// Tries at most `quorum_size` of the country's endpoints in order, once
    /// each, and stops at the first success. The last failure is returned only
    /// when every attempt failed.
    pub fn fetch_via(
        &self,
        url: &str,
        country: &str,
        registry: &ProxyRegistry,
    ) -> Result<FetchResult, IngestError> {
        let parsed = parse_fetch_url(url)?;
        let endpoints = registry
            .endpoints(country)
            .ok_or_else(|| IngestError::UnknownCountry(country.to_string()))?;
        let country = country.to_ascii_uppercase();
        let mut last = None;
        for endpoint in endpoints.iter().take(registry.quorum_size()) {
            let mut result = if *endpoint == ProxyEndpoint::Direct {
                self.fetch(url)?
            } else {
                self.attempt(&parsed, endpoint)
            };
            result.via_country = Some(country.clone());
            if result.status.is_ok() {
                return Ok(result);
            }
            tracing::debug!(%country, %endpoint, status = ?result.status, "proxy attempt failed");
            last = Some(result);
        }
        Ok(last.expect("registry entries are never empty"))
    }

    fn attempt(&self, url: &Url, endpoint: &ProxyEndpoint) -> FetchResult {
        let mut builder = ureq::AgentBuilder::new()
            .timeout(self.timeout)
            .timeout_connect(self.timeout)
            .user_agent(USER_AGENT);
        if let ProxyEndpoint::Http(addr) = endpoint {
            match ureq::Proxy::new(format!("http://{addr}")) {
                Ok(proxy) => builder = builder.proxy(proxy),
                Err(_) => return self.failed(url, FetchStatus::Unreachable),
            }
        }
        let agent = builder.build();
        let response = match agent.get(url.as_str()).call() {
            Ok(resp) => resp,
            Err(ureq::Error::Status(code, _)) => return self.failed(url, FetchStatus::HttpError(code)),
            Err(ureq::Error::Transport(t)) => return self.failed(url, classify_transport(&t)),
        };
        let code = response.status();
        let declared_encoding = response.header("content-type").and_then(charset_param);
        let mut body = Vec::new();
        if let Err(err) = response.into_reader().take(MAX_BODY).read_to_end(&mut body) {
            return self.failed(url, classify_io(&err));
        }
        if body.is_empty() {
            // Ok always carries content; an empty 2xx reports its status code.
            return self.failed(url, FetchStatus::HttpError(code));
        }
        FetchResult {
            url: url.to_string(),
            status: FetchStatus::Ok,
            body,
            declared_encoding,
            fetched_at: self.clock.now(),
            via_country: None,
        }
    }

    fn failed(&self, url: &Url, status: FetchStatus) -> FetchResult {
        FetchResult {
            url: url.to_string(),
            status,
            body: Vec::new(),
            declared_encoding: None,
            fetched_at: self.clock.now(),
            via_country: None,
        }
    }
}

fn classify_io(err: &io::Error) -> FetchStatus {
    match err.kind() {
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => FetchStatus::Timeout,
        _ => FetchStatus::Unreachable,
    }
}

fn classify_transport(t: &ureq::Transport) -> FetchStatus {
    // A connect that never completes is unreachability; a stalled exchange on
    // an open connection is a timeout.
    match t.kind() {
        ureq::ErrorKind::Io => {
            let mut source = std::error::Error::source(t);
            while let Some(err) = source {
                if let Some(io) = err.downcast_ref::<io::Error>() {
                    return classify_io(io);
                }
                source = err.source();
            }
            FetchStatus::Unreachable
        }
        _ => FetchStatus::Unreachable,
    }
}

fn charset_param(content_type: &str) -> Option<String> {
    content_type.split(';').skip(1).find_map(|param| {
        let (key, value) = param.split_once('=')?;
        key.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| value.trim().trim_matches('"').to_ascii_lowercase())
            .filter(|v| !v.is_empty())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_validation() {
        assert!(parse_fetch_url("https://example.org/a?b=1").is_ok());
        assert!(matches!(parse_fetch_url("ftp://example.org"), Err(IngestError::InvalidUrl(_))));
        assert!(matches!(parse_fetch_url("not a url"), Err(IngestError::InvalidUrl(_))));
        assert!(matches!(parse_fetch_url("file:///etc/passwd"), Err(IngestError::InvalidUrl(_))));
    }

    #[test]
    fn charset_from_content_type() {
        assert_eq!(charset_param("text/html; charset=ISO-8859-1").as_deref(), Some("iso-8859-1"));
        assert_eq!(charset_param("text/html;charset=\"utf-8\"").as_deref(), Some("utf-8"));
        assert_eq!(charset_param("text/html"), None);
    }

    #[test]
    fn status_serializes_with_code() {
        let json = serde_json::to_string(&FetchStatus::HttpError(404)).unwrap();
        assert_eq!(json, r#"{"kind":"http_error","code":404}"#);
        assert_eq!(serde_json::to_string(&FetchStatus::Ok).unwrap(), r#"{"kind":"ok"}"#);
    }
}
