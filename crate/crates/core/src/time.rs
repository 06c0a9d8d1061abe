//! UTC instants at second precision, rendered as `YYYY-MM-DDTHH:MM:SSZ`.

use chrono::{DateTime, SecondsFormat, Timelike, Utc};

pub type Instant = DateTime<Utc>;

/// Drops sub-second precision.
pub fn truncate(t: Instant) -> Instant {
    t.with_nanosecond(0).expect("zero nanoseconds is always valid")
}

/// The exact string that enters hashed material.
pub fn rfc3339(t: Instant) -> String {
    truncate(t).to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_rfc3339(s: &str) -> Result<Instant, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc))
}

/// Serde adapter for second-precision RFC 3339 UTC strings.
pub mod serde_secs {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Instant, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rfc3339(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Instant, D::Error> {
        let raw = String::deserialize(d)?;
        parse_rfc3339(&raw).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(t: &Option<Instant>, s: S) -> Result<S::Ok, S::Error> {
            match t {
                Some(t) => s.serialize_some(&rfc3339(*t)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Instant>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|raw| parse_rfc3339(&raw).map_err(serde::de::Error::custom))
                .transpose()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn renders_with_z_suffix_and_no_fraction() {
        let t = Utc.with_ymd_and_hms(2016, 5, 8, 9, 54, 7).unwrap()
            + chrono::Duration::milliseconds(731);
        assert_eq!(rfc3339(t), "2016-05-08T09:54:07Z");
        assert_eq!(parse_rfc3339("2016-05-08T09:54:07Z").unwrap(), truncate(t));
    }
}
