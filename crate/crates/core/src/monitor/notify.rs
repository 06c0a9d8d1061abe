//! Outgoing notifications and the sinks that deliver them.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::store::{RecordId, Store, StoreError, UserId};
use crate::time::{self, Instant};

pub const DEFAULT_SUBJECT_PREFIX: &str = "[StampTheWeb]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationKind {
    ContentChanged,
    CountryDiffers,
    Blocked,
    AccountConfirmation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationRefs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_record: Option<RecordId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_record: Option<RecordId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_result: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<UserId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub to: String,
    pub subject: String,
    pub body: String,
    pub kind: NotificationKind,
    pub refs: NotificationRefs,
    #[serde(with = "time::serde_secs")]
    pub queued_at: Instant,
}

impl Notification {
    /// Builds a notification whose subject carries `prefix`.
    pub fn new(
        prefix: &str,
        to: impl Into<String>,
        subject: &str,
        body: impl Into<String>,
        kind: NotificationKind,
        refs: NotificationRefs,
        queued_at: Instant,
    ) -> Self {
        Self {
            to: to.into(),
            subject: format!("{prefix} {subject}"),
            body: body.into(),
            kind,
            refs,
            queued_at: time::truncate(queued_at),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SinkError {
    #[error("delivery failed: {0}")]
    Delivery(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait NotificationSink: Send + Sync {
    fn deliver(&self, notification: &Notification) -> Result<(), SinkError>;
}

/// Appends one JSON document per line.
pub struct FileSink {
    path: PathBuf,
    lock: Mutex<()>,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        Ok(Self { path, lock: Mutex::new(()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read_all(path: &Path) -> io::Result<Vec<Notification>> {
        let raw = match fs::read_to_string(path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        raw.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
            .collect()
    }
}

impl NotificationSink for FileSink {
    fn deliver(&self, notification: &Notification) -> Result<(), SinkError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut line = serde_json::to_string(notification).map_err(|e| SinkError::Delivery(e.to_string()))?;
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }
}

/// Moves queued notifications to `sink` in queue order. Each is removed from
/// the queue right after its delivery succeeds; the first failure stops the
/// drain and leaves the rest queued.
pub fn drain_outbox(store: &Store, sink: &dyn NotificationSink) -> Result<usize, StoreError> {
    let mut delivered = 0;
    for (id, notification) in store.queued_notifications()? {
        if let Err(err) = sink.deliver(&notification) {
            tracing::warn!(%err, outbox_id = id, "notification delivery failed");
            break;
        }
        store.remove_notification(id)?;
        delivered += 1;
    }
    Ok(delivered)
}
