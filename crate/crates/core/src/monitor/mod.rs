//! Recurring work driven by an injected clock: due schedules, change
//! detection, country comparison, block watching and periodic sealing.

mod notify;

pub use notify::{
    drain_outbox, FileSink, Notification, NotificationKind, NotificationRefs, NotificationSink, SinkError,
    DEFAULT_SUBJECT_PREFIX,
};

use std::sync::Arc;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError, LoadedPage, SealOutcome};
use crate::ingest::DEFAULT_LOCATION;
use crate::store::{RecordId, ScheduleMode, ScheduleTask, StampRecord};
use crate::time::{self, Instant};

pub const DEFAULT_SEAL_INTERVAL_HOURS: i64 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Unchanged { record: RecordId },
    Restamped { old_record: Option<RecordId>, new_record: RecordId, notified: bool },
    CountriesMatch { country: String },
    CountryDiffers { country: String, record: Option<RecordId>, notified: bool },
    Blocked { country: String, block_result: i64, notified: bool },
    NotBlocked { country: String, block_result: i64 },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRun {
    pub task_id: i64,
    pub mode: ScheduleMode,
    pub url: String,
    #[serde(with = "time::serde_secs")]
    pub at: Instant,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub runs: Vec<TaskRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sealed_batch: Option<u64>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| matches!(r.outcome, Outcome::Skipped { .. })).count()
    }
}

/// Due iff never run or at least `frequency_days` whole days have passed.
pub fn is_due(task: &ScheduleTask, now: Instant) -> bool {
    match task.last_run {
        None => true,
        Some(last) => now - last >= Engine::period(task),
    }
}

pub struct Monitor {
    engine: Arc<Engine>,
    seal_interval: Duration,
}

impl Monitor {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self { engine, seal_interval: Duration::hours(DEFAULT_SEAL_INTERVAL_HOURS) }
    }

    pub fn with_seal_interval(mut self, interval: Duration) -> Self {
        self.seal_interval = interval;
        self
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    /// Runs every due task once at the clock's current instant. A task's
    /// failure is reported and never stops the others.
    pub fn run_due(&self) -> Result<RunReport, EngineError> {
        let now = self.engine.now();
        let mut report = RunReport::default();
        for task in self.engine.store().list_schedules()? {
            if !is_due(&task, now) {
                continue;
            }
            let outcome = match task.mode {
                ScheduleMode::Restamp => self.check_restamp(&task),
                ScheduleMode::CountryCompare => self.check_country_compare(&task),
                ScheduleMode::BlockWatch => self.check_block_task(&task),
            }
            .unwrap_or_else(|err| Outcome::Skipped { reason: err.to_string() });
            self.engine.store().set_last_run(task.id, now)?;
            tracing::info!(task = task.id, mode = %task.mode, outcome = ?outcome, "task ran");
            report.runs.push(TaskRun { task_id: task.id, mode: task.mode, url: task.url.clone(), at: now, outcome });
        }
        Ok(report)
    }

    /// One scheduler step: due tasks, then a seal when the interval elapsed.
    pub fn tick(&self) -> Result<RunReport, EngineError> {
        let mut report = self.run_due()?;
        if let Some(outcome) = self.seal_if_due()? {
            report.sealed_batch = outcome.sealed.map(|b| b.batch_id);
        }
        Ok(report)
    }

    pub fn seal_if_due(&self) -> Result<Option<SealOutcome>, EngineError> {
        let now = self.engine.now();
        let due = match self.engine.store().last_sealed_at()? {
            None => true,
            Some(last) => now - last >= self.seal_interval,
        };
        if !due {
            return Ok(None);
        }
        match self.engine.seal_pending() {
            Ok(outcome) => Ok(Some(outcome)),
            Err(EngineError::SealInProgress) => Ok(None),
            Err(err) => Err(err),
        }
    }

    /// Re-fetches the URL and stamps it again when its content hash differs
    /// from the latest stored version.
    pub fn check_restamp(&self, task: &ScheduleTask) -> Result<Outcome, EngineError> {
        let page = match self.engine.load(&task.url, None) {
            Ok(page) => page,
            Err(err @ (EngineError::Upstream { .. } | EngineError::Extraction(_))) => {
                return Ok(Outcome::Skipped { reason: err.to_string() })
            }
            Err(err) => return Err(err),
        };
        let previous = self.engine.store().latest_version(&task.url)?;
        if let Some(prev) = &previous {
            if prev.core.content_hash == page.content_hash {
                return Ok(Outcome::Unchanged { record: prev.id });
            }
        }
        let outcome = self.engine.stamp_page(&page, task.owner, task.post_title.clone())?;
        if !outcome.created {
            // Same text already stored under some other URL or version.
            return Ok(Outcome::Unchanged { record: outcome.record.id });
        }
        let new = outcome.record;
        self.engine.store().set_linked_post(task.id, new.id)?;
        let notified = match &task.email {
            Some(to) => {
                self.enqueue(self.content_changed(to, previous.as_ref(), &new))?;
                true
            }
            None => false,
        };
        Ok(Outcome::Restamped { old_record: previous.map(|p| p.id), new_record: new.id, notified })
    }

    /// Fetches the URL from the task's country and from the default location
    /// and reports when they disagree or the country cannot reach it.
    pub fn check_country_compare(&self, task: &ScheduleTask) -> Result<Outcome, EngineError> {
        let country = task
            .country
            .clone()
            .ok_or_else(|| EngineError::Input("country comparison needs a country".into()))?;
        let home = self.load_soft(&task.url, None)?;
        let away = self.load_soft(&task.url, Some(&country))?;
        let now = self.engine.now();
        match (home, away) {
            (None, None) => Ok(Outcome::Skipped { reason: format!("unreachable from {DEFAULT_LOCATION} and {country}") }),
            (_, None) => {
                let post = self.engine.store().latest_version(&task.url)?.map(|r| r.id);
                let block = self.engine.store().insert_block(&task.url, post, &country, true, now)?;
                let notified = match &task.email {
                    Some(to) => {
                        self.enqueue(self.blocked(to, &task.url, &country, block.id, post))?;
                        true
                    }
                    None => false,
                };
                Ok(Outcome::Blocked { country, block_result: block.id, notified })
            }
            (None, Some(_)) => Ok(Outcome::Skipped { reason: format!("unreachable from {DEFAULT_LOCATION}") }),
            (Some(home), Some(away)) => {
                if home.content_hash == away.content_hash {
                    return Ok(Outcome::CountriesMatch { country });
                }
                let latest = self.engine.store().latest_version(&task.url)?;
                let record = match latest {
                    Some(r) if r.core.content_hash == home.content_hash => r.id,
                    _ => self.engine.stamp_page(&home, task.owner, task.post_title.clone())?.record.id,
                };
                let notified = match &task.email {
                    Some(to) => {
                        self.enqueue(self.country_differs(to, &task.url, &country, &home, &away, record))?;
                        true
                    }
                    None => false,
                };
                Ok(Outcome::CountryDiffers { country, record: Some(record), notified })
            }
        }
    }

    fn check_block_task(&self, task: &ScheduleTask) -> Result<Outcome, EngineError> {
        let country = task
            .country
            .clone()
            .ok_or_else(|| EngineError::Input("block watch needs a country".into()))?;
        let result = self
            .engine
            .block_check(&task.url, std::slice::from_ref(&country))?
            .pop()
            .expect("one country in, one verdict out");
        if !result.blocked {
            return Ok(Outcome::NotBlocked { country, block_result: result.id });
        }
        let notified = match &task.email {
            Some(to) => {
                self.enqueue(self.blocked(to, &task.url, &country, result.id, result.post_id))?;
                true
            }
            None => false,
        };
        Ok(Outcome::Blocked { country, block_result: result.id, notified })
    }

    fn load_soft(&self, url: &str, country: Option<&str>) -> Result<Option<LoadedPage>, EngineError> {
        match self.engine.load(url, country) {
            Ok(page) => Ok(Some(page)),
            Err(EngineError::Upstream { .. } | EngineError::Extraction(_)) => Ok(None),
            Err(err) => Err(err),
        }
    }

    fn enqueue(&self, notification: Notification) -> Result<(), EngineError> {
        self.engine.store().enqueue_notification(&notification)?;
        Ok(())
    }

    fn content_changed(&self, to: &str, old: Option<&StampRecord>, new: &StampRecord) -> Notification {
        let mut body = format!("The content of {} has changed.\n\n", new.url);
        if let Some(old) = old {
            body.push_str(&format!(
                "Previous version: {} stamped at {}\n",
                old.core.content_hash,
                time::rfc3339(old.core.stamped_at)
            ));
        }
        body.push_str(&format!(
            "New version: {} stamped at {}\n",
            new.core.content_hash,
            time::rfc3339(new.core.stamped_at)
        ));
        if let Some(old) = old {
            body.push_str(&format!(
                "\nCompare: {}/compare?old={}&new={}\n",
                self.engine.server_url(),
                old.id,
                new.id
            ));
        }
        Notification::new(
            self.engine.subject_prefix(),
            to,
            "Content change detected",
            body,
            NotificationKind::ContentChanged,
            NotificationRefs { old_record: old.map(|o| o.id), new_record: Some(new.id), ..Default::default() },
            self.engine.now(),
        )
    }

    fn country_differs(
        &self,
        to: &str,
        url: &str,
        country: &str,
        home: &LoadedPage,
        away: &LoadedPage,
        record: RecordId,
    ) -> Notification {
        let body = format!(
            "{url} differs between {DEFAULT_LOCATION} and {country}.\n\n\
             {DEFAULT_LOCATION}: {}\n{country}: {}\n\nCompare: {}/compare?old={record}&country={country}\n",
            home.content_hash,
            away.content_hash,
            self.engine.server_url(),
        );
        Notification::new(
            self.engine.subject_prefix(),
            to,
            &format!("Content differs in {country}"),
            body,
            NotificationKind::CountryDiffers,
            NotificationRefs { old_record: Some(record), ..Default::default() },
            self.engine.now(),
        )
    }

    fn blocked(&self, to: &str, url: &str, country: &str, block_id: i64, post: Option<RecordId>) -> Notification {
        let body = format!(
            "{url} could not be reached from {country} through any of its proxies at {}.\n",
            time::rfc3339(self.engine.now())
        );
        Notification::new(
            self.engine.subject_prefix(),
            to,
            &format!("Blocked in {country}"),
            body,
            NotificationKind::Blocked,
            NotificationRefs { old_record: post, block_result: Some(block_id), ..Default::default() },
            self.engine.now(),
        )
    }
}
