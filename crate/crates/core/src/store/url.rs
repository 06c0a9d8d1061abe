use url::Url;

use super::StoreError;

/// Key used for dedup and version lookup: lowercase scheme and host, no
/// default port, no fragment, query kept, `/` for an empty path.
pub fn normalize_url(raw: &str) -> Result<String, StoreError> {
    let mut url = Url::parse(raw.trim()).map_err(|e| StoreError::Invalid(format!("url {raw:?}: {e}")))?;
    if url.host_str().is_none() {
        return Err(StoreError::Invalid(format!("url {raw:?} has no host")));
    }
    // The url crate already lowercases scheme and host, drops default ports and
    // turns an empty path into "/".
    url.set_fragment(None);
    Ok(url.to_string())
}

/// Registrable domain (public suffix plus one label) of the URL's host,
/// lowercased. IP hosts and unknown suffixes fall back to the bare host.
pub fn domain_of(raw: &str) -> Result<String, StoreError> {
    let url = Url::parse(raw.trim()).map_err(|e| StoreError::Invalid(format!("url {raw:?}: {e}")))?;
    let host = url
        .host_str()
        .ok_or_else(|| StoreError::Invalid(format!("url {raw:?} has no host")))?
        .trim_end_matches('.')
        .to_ascii_lowercase();
    if matches!(url.host(), Some(url::Host::Ipv4(_) | url::Host::Ipv6(_))) {
        return Ok(host);
    }
    Ok(psl::domain_str(&host).map(str::to_string).unwrap_or(host))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        let same = [
            "https://Example.ORG",
            "https://example.org/",
            "HTTPS://example.org:443/",
            "https://example.org/#top",
        ];
        for raw in same {
            assert_eq!(normalize_url(raw).unwrap(), "https://example.org/", "{raw}");
        }
        assert_eq!(normalize_url("http://example.org:80/a?b=1#c").unwrap(), "http://example.org/a?b=1");
        assert_eq!(normalize_url("http://example.org:8080/a").unwrap(), "http://example.org:8080/a");
        // Non-empty paths keep their trailing slash.
        assert_ne!(normalize_url("https://e.org/a/").unwrap(), normalize_url("https://e.org/a").unwrap());
        assert!(normalize_url("mailto:x@y.org").is_err());
    }

    #[test]
    fn registrable_domains() {
        assert_eq!(domain_of("https://www.bbc.co.uk/news/world").unwrap(), "bbc.co.uk");
        assert_eq!(domain_of("https://www.NYTimes.com/2016/x").unwrap(), "nytimes.com");
        assert_eq!(domain_of("https://en.wikipedia.org/wiki/X").unwrap(), "wikipedia.org");
        assert_eq!(domain_of("http://127.0.0.1:8080/a").unwrap(), "127.0.0.1");
        assert_eq!(domain_of("http://localhost/a").unwrap(), "localhost");
    }
}
