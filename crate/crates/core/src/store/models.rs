use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::stampcore::StampCore;
use crate::time::{self, Instant};

pub type RecordId = i64;
pub type UserId = i64;

/// One timestamped version of one URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StampRecord {
    pub id: RecordId,
    pub url: String,
    pub domain: String,
    pub web_title: String,
    pub post_title: Option<String>,
    pub core: StampCore,
    pub owner: UserId,
    #[serde(with = "time::serde_secs")]
    pub created_at: Instant,
    pub snapshot_ref: String,
    pub batch_id: Option<u64>,
    pub country_of_origin: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Restamp,
    CountryCompare,
    BlockWatch,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Restamp => "restamp",
            ScheduleMode::CountryCompare => "country_compare",
            ScheduleMode::BlockWatch => "block_watch",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "restamp" => Ok(ScheduleMode::Restamp),
            "country_compare" => Ok(ScheduleMode::CountryCompare),
            "block_watch" => Ok(ScheduleMode::BlockWatch),
            other => Err(StoreError::Invalid(format!("unknown schedule mode {other:?}"))),
        }
    }
}

pub const MIN_FREQUENCY_DAYS: u32 = 1;
pub const MAX_FREQUENCY_DAYS: u32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleTask {
    pub id: i64,
    pub url: String,
    pub post_title: Option<String>,
    pub frequency_days: u32,
    pub email: Option<String>,
    pub country: Option<String>,
    pub mode: ScheduleMode,
    #[serde(with = "time::serde_secs::option")]
    pub last_run: Option<Instant>,
    pub owner: UserId,
    pub linked_post: Option<RecordId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct NewSchedule {
    pub url: String,
    #[serde(default)]
    pub post_title: Option<String>,
    pub frequency_days: u32,
    #[serde(default)]
    pub email: Option<String>,
    #[serde(default)]
    pub country: Option<String>,
    pub mode: ScheduleMode,
}

impl NewSchedule {
    pub fn validate(&self) -> Result<(), StoreError> {
        if !(MIN_FREQUENCY_DAYS..=MAX_FREQUENCY_DAYS).contains(&self.frequency_days) {
            return Err(StoreError::Invalid(format!(
                "frequency must be between {MIN_FREQUENCY_DAYS} and {MAX_FREQUENCY_DAYS} days, got {}",
                self.frequency_days
            )));
        }
        if matches!(self.mode, ScheduleMode::CountryCompare | ScheduleMode::BlockWatch)
            && self.country.as_deref().is_none_or(str::is_empty)
        {
            return Err(StoreError::Invalid(format!("{} schedules need a country", self.mode)));
        }
        if let Some(email) = &self.email {
            if !email.contains('@') {
                return Err(StoreError::Invalid(format!("invalid email {email:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockResult {
    pub id: i64,
    pub url: String,
    pub post_id: Option<RecordId>,
    pub country: String,
    pub blocked: bool,
    #[serde(with = "time::serde_secs")]
    pub checked_at: Instant,
}

/// Role bitmasks, stored as their decimal values.
pub mod permissions {
    pub const WRITE: u32 = 0x04;
    pub const MODERATE: u32 = 0x08;
    pub const ADMINISTER: u32 = 0xff;

    pub const USER: u32 = 7;
    pub const MODERATOR: u32 = 15;
    pub const ADMINISTRATOR: u32 = 255;

    pub fn allows(granted: u32, required: u32) -> bool {
        granted & required == required
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserAccount {
    pub id: UserId,
    pub username: String,
    pub email: String,
    #[serde(skip)]
    pub password_digest: String,
    pub confirmed: bool,
    pub permissions: u32,
    #[serde(with = "time::serde_secs")]
    pub member_since: Instant,
    #[serde(with = "time::serde_secs")]
    pub last_seen: Instant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryStat {
    pub country: String,
    pub record_count: u64,
    /// Share of all records, rounded to two decimals.
    pub percentage: f64,
    /// `percentage` rendered with exactly two decimals.
    pub percentage_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub page: u32,
    pub per_page: u32,
    pub total: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(freq: u32, mode: ScheduleMode, country: Option<&str>) -> NewSchedule {
        NewSchedule {
            url: "https://example.org/".into(),
            post_title: None,
            frequency_days: freq,
            email: None,
            country: country.map(str::to_string),
            mode,
        }
    }

    #[test]
    fn frequency_bounds() {
        assert!(schedule(0, ScheduleMode::Restamp, None).validate().is_err());
        assert!(schedule(1, ScheduleMode::Restamp, None).validate().is_ok());
        assert!(schedule(30, ScheduleMode::Restamp, None).validate().is_ok());
        assert!(schedule(31, ScheduleMode::Restamp, None).validate().is_err());
    }

    #[test]
    fn country_modes_need_country() {
        assert!(schedule(3, ScheduleMode::CountryCompare, None).validate().is_err());
        assert!(schedule(3, ScheduleMode::BlockWatch, Some("")).validate().is_err());
        assert!(schedule(3, ScheduleMode::BlockWatch, Some("CN")).validate().is_ok());
    }

    #[test]
    fn role_masks() {
        use permissions::*;
        assert!(allows(USER, WRITE));
        assert!(!allows(USER, MODERATE));
        assert!(allows(MODERATOR, MODERATE | WRITE));
        assert!(!allows(MODERATOR, ADMINISTER));
        assert!(allows(ADMINISTRATOR, ADMINISTER));
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in [ScheduleMode::Restamp, ScheduleMode::CountryCompare, ScheduleMode::BlockWatch] {
            assert_eq!(mode.to_string().parse::<ScheduleMode>().unwrap(), mode);
            assert_eq!(serde_json::to_value(mode).unwrap(), mode.to_string());
        }
    }
}
