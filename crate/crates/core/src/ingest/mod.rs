//! Fetching pages and reducing them to canonical text.

mod extract;
mod fetch;
mod geo;
mod proxy;

pub use extract::{canonicalize, extract_article};
pub use fetch::{parse_fetch_url, FetchResult, FetchStatus, Fetcher, DEFAULT_TIMEOUT};
pub use geo::{
    lookup_location, FixtureGeoProvider, GeoError, GeoFix, GeoLocation, GeoProvider, HttpGeoProvider,
    LocationCache, MemoryLocationCache,
};
pub use proxy::{
    ProxyEndpoint, ProxyRegistry, DEFAULT_BLOCK_MAP_COUNTRIES, DEFAULT_LOCATION, DEFAULT_QUORUM,
};

use serde::{Deserialize, Serialize};

use crate::time::{self, Instant};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid URL: {0}")]
    InvalidUrl(String),
    #[error("unknown country {0:?}")]
    UnknownCountry(String),
    #[error("extraction failed: {0}")]
    Extraction(String),
    #[error("configuration: {0}")]
    Config(String),
}

/// The deterministic text form of a page; the only input to content hashing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalDocument {
    pub source_url: String,
    pub web_title: String,
    pub canonical_text: String,
    #[serde(with = "time::serde_secs")]
    pub extracted_at: Instant,
}
