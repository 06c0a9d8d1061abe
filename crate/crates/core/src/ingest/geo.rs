//! Host geolocation with a write-through cache.

use std::collections::HashMap;
use std::net::{IpAddr, ToSocketAddrs};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::time::{self, Instant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoLocation {
    pub host_ip: String,
    pub country: String,
    pub latitude: f64,
    pub longitude: f64,
    #[serde(with = "time::serde_secs")]
    pub resolved_at: Instant,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GeoError {
    #[error("location unavailable for {0}")]
    Unavailable(String),
    #[error("geo fixture line {line}: {reason}")]
    Fixture { line: usize, reason: String },
}

/// Coordinates and country for one address.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoFix {
    pub country: String,
    pub latitude: f64,
    pub longitude: f64,
}

pub trait GeoProvider: Send + Sync {
    fn locate(&self, ip: IpAddr) -> Result<GeoFix, GeoError>;
}

pub trait LocationCache: Send + Sync {
    fn get(&self, host: &str) -> Option<GeoLocation>;
    fn put(&self, host: &str, location: &GeoLocation);
}

#[derive(Default)]
pub struct MemoryLocationCache(Mutex<HashMap<String, GeoLocation>>);

impl LocationCache for MemoryLocationCache {
    fn get(&self, host: &str) -> Option<GeoLocation> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).get(host).cloned()
    }

    fn put(&self, host: &str, location: &GeoLocation) {
        self.0
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(host.to_string(), location.clone());
    }
}

/// Static prefix table read from lines of `CIDR country lat lon`. The most
/// specific matching prefix wins.
#[derive(Debug, Default)]
pub struct FixtureGeoProvider {
    entries: Vec<(IpNet, GeoFix)>,
}

impl FixtureGeoProvider {
    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let raw = std::fs::read_to_string(path).map_err(|e| GeoError::Fixture {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, GeoError> {
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| GeoError::Fixture {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [cidr, country, lat, lon] = fields[..] else {
                return Err(err("expected `CIDR country lat lon`"));
            };
            let net: IpNet = cidr.parse().map_err(|_| err("bad CIDR"))?;
            let latitude: f64 = lat.parse().map_err(|_| err("bad latitude"))?;
            let longitude: f64 = lon.parse().map_err(|_| err("bad longitude"))?;
            if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
                return Err(err("coordinates out of range"));
            }
            entries.push((
                net.trunc(),
                GeoFix {
                    country: country.to_ascii_uppercase(),
                    latitude,
                    longitude,
                },
            ));
        }
        Ok(Self { entries })
    }
}

impl GeoProvider for FixtureGeoProvider {
    fn locate(&self, ip: IpAddr) -> Result<GeoFix, GeoError> {
        self.entries
            .iter()
            .filter(|(net, _)| net.contains(&ip))
            .max_by_key(|(net, _)| net.prefix_len())
            .map(|(_, fix)| fix.clone())
            .ok_or_else(|| GeoError::Unavailable(ip.to_string()))
    }
}

/// Remote JSON geo service queried as `GET <base>/<ip>`; expects
/// `countryCode`, `lat` and `lon` fields.
pub struct HttpGeoProvider {
    base: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct HttpGeoResponse {
    #[serde(rename = "countryCode")]
    country_code: Option<String>,
    lat: Option<f64>,
    lon: Option<f64>,
}

impl HttpGeoProvider {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(10)).build(),
        }
    }
}

impl GeoProvider for HttpGeoProvider {
    fn locate(&self, ip: IpAddr) -> Result<GeoFix, GeoError> {
        let url = format!("{}/{}", self.base.trim_end_matches('/'), ip);
        let unavailable = || GeoError::Unavailable(ip.to_string());
        let resp: HttpGeoResponse = self
            .agent
            .get(&url)
            .call()
            .map_err(|_| unavailable())?
            .into_json()
            .map_err(|_| unavailable())?;
        match (resp.country_code, resp.lat, resp.lon) {
            (Some(country), Some(latitude), Some(longitude)) if !country.is_empty() => Ok(GeoFix {
                country: country.to_ascii_uppercase(),
                latitude,
                longitude,
            }),
            _ => Err(unavailable()),
        }
    }
}

fn resolve(host: &str) -> Option<IpAddr> {
    let bare = host.trim_start_matches('[').trim_end_matches(']');
    if let Ok(ip) = bare.parse() {
        return Some(ip);
    }
    (bare, 80).to_socket_addrs().ok()?.next().map(|sa| sa.ip())
}

/// Cache hits never reach the provider. Misses resolve the host, ask the
/// provider, and store the answer.
pub fn lookup_location(
    host: &str,
    cache: &dyn LocationCache,
    provider: &dyn GeoProvider,
    now: Instant,
) -> Result<GeoLocation, GeoError> {
    let key = host.trim().to_ascii_lowercase();
    if key.is_empty() {
        return Err(GeoError::Unavailable(String::new()));
    }
    if let Some(hit) = cache.get(&key) {
        return Ok(hit);
    }
    let ip = resolve(&key).ok_or_else(|| GeoError::Unavailable(key.clone()))?;
    let fix = provider.locate(ip)?;
    let location = GeoLocation {
        host_ip: ip.to_string(),
        country: fix.country,
        latitude: fix.latitude,
        longitude: fix.longitude,
        resolved_at: time::truncate(now),
    };
    cache.put(&key, &location);
    Ok(location)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use std::sync::atomic::{AtomicUsize, Ordering};

    const FIXTURE: &str = "\
# test prefixes
203.0.113.0/24  US  37.751 -97.822
198.51.100.0/24 DE  51.2993 9.491
198.51.100.128/25 FR 48.8582 2.3387
2001:db8::/32   GB  51.4964 -0.1224
";

    struct Counting<P> {
        inner: P,
        calls: AtomicUsize,
    }

    impl<P: GeoProvider> GeoProvider for Counting<P> {
        fn locate(&self, ip: IpAddr) -> Result<GeoFix, GeoError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.locate(ip)
        }
    }

    fn provider() -> Counting<FixtureGeoProvider> {
        Counting {
            inner: FixtureGeoProvider::parse(FIXTURE).unwrap(),
            calls: AtomicUsize::new(0),
        }
    }

    fn now() -> Instant {
        Utc.with_ymd_and_hms(2016, 8, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn fixture_prefix_lookup() {
        let cache = MemoryLocationCache::default();
        let loc = lookup_location("203.0.113.7", &cache, &provider(), now()).unwrap();
        assert_eq!(loc.country, "US");
        assert_eq!(loc.host_ip, "203.0.113.7");
    }

    #[test]
    fn longest_prefix_wins() {
        let p = FixtureGeoProvider::parse(FIXTURE).unwrap();
        assert_eq!(p.locate("198.51.100.7".parse().unwrap()).unwrap().country, "DE");
        assert_eq!(p.locate("198.51.100.200".parse().unwrap()).unwrap().country, "FR");
        assert_eq!(p.locate("2001:db8::1".parse().unwrap()).unwrap().country, "GB");
    }

    #[test]
    fn second_lookup_is_served_from_cache() {
        let cache = MemoryLocationCache::default();
        let provider = provider();
        let first = lookup_location("203.0.113.7", &cache, &provider, now()).unwrap();
        let later = now() + chrono::Duration::days(1);
        let second = lookup_location("203.0.113.7", &cache, &provider, later).unwrap();
        assert_eq!(first, second);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unknown_ip_is_unavailable_and_not_cached() {
        let cache = MemoryLocationCache::default();
        let err = lookup_location("192.0.2.1", &cache, &provider(), now()).unwrap_err();
        assert_eq!(err, GeoError::Unavailable("192.0.2.1".into()));
        assert!(cache.get("192.0.2.1").is_none());
        assert!(lookup_location("", &cache, &provider(), now()).is_err());
    }

    #[test]
    fn fixture_errors_name_the_line() {
        assert!(matches!(
            FixtureGeoProvider::parse("10.0.0.0/8 US 100 0"),
            Err(GeoError::Fixture { line: 1, .. })
        ));
        assert!(matches!(
            FixtureGeoProvider::parse("\n10.0.0.0/8 US"),
            Err(GeoError::Fixture { line: 2, .. })
        ));
    }
}
