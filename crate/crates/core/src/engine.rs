//! End-to-end operations composed from ingest, stampcore, anchor, diff and
//! store. The CLI and the HTTP service both go through here.

use std::sync::Arc;

use chrono::Duration;

use crate::anchor::{retry_anchor, seal_batch, AnchorBatch, AnchorError, JournalLedger, LedgerBackend, RemoteLedger, SealLock};
use crate::clock::Clock;
use crate::config::Config;
use crate::diff::{compare_versions, ComparisonView, Version};
use crate::hash::Hash256;
use crate::ingest::{
    extract_article, lookup_location, parse_fetch_url, FetchResult, FetchStatus, Fetcher, FixtureGeoProvider,
    GeoProvider, HttpGeoProvider, IngestError, ProxyRegistry, CanonicalDocument,
};
use crate::receipt::Receipt;
use crate::stampcore::{hash_content, StampCore, TsaKeyPair, VerificationReport};
use crate::store::{
    BlockResult, NewSchedule, NewStamp, RecordId, ScheduleMode, ScheduleTask, StampRecord, Store, StoreError,
    UserId,
};
use crate::time::{self, Instant};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{0}")]
    Input(String),
    #[error("fetching {url} failed: {status:?}")]
    Upstream { url: String, status: FetchStatus },
    #[error("extraction failed: {0}")]
    Extraction(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("another batch seal is in progress")]
    SealInProgress,
    #[error(transparent)]
    Store(StoreError),
    #[error("setup: {0}")]
    Setup(String),
}

impl From<StoreError> for EngineError {
    fn from(err: StoreError) -> Self {
        match err {
            StoreError::Invalid(msg) => EngineError::Input(msg),
            StoreError::NotFound(msg) => EngineError::NotFound(msg),
            other => EngineError::Store(other),
        }
    }
}

impl From<IngestError> for EngineError {
    fn from(err: IngestError) -> Self {
        match err {
            IngestError::Extraction(msg) => EngineError::Extraction(msg),
            IngestError::Config(msg) => EngineError::Setup(msg),
            other => EngineError::Input(other.to_string()),
        }
    }
}

/// A fetched and extracted page.
#[derive(Debug, Clone)]
pub struct LoadedPage {
    pub fetch: FetchResult,
    pub doc: CanonicalDocument,
    pub content_hash: Hash256,
}

#[derive(Debug, Clone)]
pub struct StampOutcome {
    pub record: StampRecord,
    pub created: bool,
}

/// What the newer side of a comparison is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompareTarget {
    Record(RecordId),
    Current,
    Country(String),
}

#[derive(Debug, Clone, Default)]
pub struct SealOutcome {
    pub sealed: Option<AnchorBatch>,
    /// Earlier batches whose ledger submission was retried, with the result.
    pub retried: Vec<(u64, bool)>,
}

pub struct Engine {
    store: Arc<Store>,
    fetcher: Fetcher,
    registry: ProxyRegistry,
    key: TsaKeyPair,
    ledger: Arc<dyn LedgerBackend>,
    geo: Option<Arc<dyn GeoProvider>>,
    clock: Arc<dyn Clock>,
    seal_lock: SealLock,
    server_url: String,
    subject_prefix: String,
}

impl Engine {
    pub fn new(
        store: Arc<Store>,
        fetcher: Fetcher,
        registry: ProxyRegistry,
        key: TsaKeyPair,
        ledger: Arc<dyn LedgerBackend>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            store,
            fetcher,
            registry,
            key,
            ledger,
            geo: None,
            clock,
            seal_lock: SealLock::default(),
            server_url: "http://localhost:8080".into(),
            subject_prefix: crate::monitor::DEFAULT_SUBJECT_PREFIX.into(),
        }
    }

    /// Wires every component from settings.
    pub fn from_config(config: &Config, clock: Arc<dyn Clock>) -> Result<Self, EngineError> {
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| EngineError::Setup(format!("{}: {e}", config.data_dir.display())))?;
        let store = Store::open(config.database_path(), config.snapshot_path())
            .map_err(|e| EngineError::Setup(e.to_string()))?
            .with_page_size(config.posts_per_page);
        let key = TsaKeyPair::load_or_generate(&config.tsa_key_path()).map_err(|e| EngineError::Setup(e.to_string()))?;
        let ledger: Arc<dyn LedgerBackend> = match &config.anchor_url {
            Some(url) => Arc::new(RemoteLedger::new(url.clone(), config.anchor_token.clone().unwrap_or_default())),
            None => Arc::new(JournalLedger::open(config.ledger_path()).map_err(|e| EngineError::Setup(e.to_string()))?),
        };
        let geo: Option<Arc<dyn GeoProvider>> = match (&config.geo_fixture, &config.geo_url) {
            (Some(path), _) => Some(Arc::new(
                FixtureGeoProvider::load(path).map_err(|e| EngineError::Setup(e.to_string()))?,
            )),
            (None, Some(url)) => Some(Arc::new(HttpGeoProvider::new(url.clone()))),
            (None, None) => None,
        };
        let fetcher = Fetcher::new(config.fetch_timeout(), clock.clone());
        let mut engine = Engine::new(Arc::new(store), fetcher, config.proxy_registry()?, key, ledger, clock)
            .with_server_url(&config.server_url)
            .with_subject_prefix(&config.mail.subject_prefix);
        engine.geo = geo;
        Ok(engine)
    }

    pub fn with_geo(mut self, geo: Arc<dyn GeoProvider>) -> Self {
        self.geo = Some(geo);
        self
    }

    pub fn with_server_url(mut self, url: &str) -> Self {
        self.server_url = url.trim_end_matches('/').to_string();
        self
    }

    pub fn with_subject_prefix(mut self, prefix: &str) -> Self {
        self.subject_prefix = prefix.to_string();
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn registry(&self) -> &ProxyRegistry {
        &self.registry
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn key(&self) -> &TsaKeyPair {
        &self.key
    }

    pub fn ledger(&self) -> &Arc<dyn LedgerBackend> {
        &self.ledger
    }

    pub fn server_url(&self) -> &str {
        &self.server_url
    }

    pub fn subject_prefix(&self) -> &str {
        &self.subject_prefix
    }

    pub fn now(&self) -> Instant {
        self.clock.now()
    }

    /// Fetches from the server's own location, or through `country`'s proxies.
    pub fn load(&self, url: &str, country: Option<&str>) -> Result<LoadedPage, EngineError> {
        let fetch = match country {
            None => self.fetcher.fetch(url)?,
            Some(cc) => self.fetcher.fetch_via(url, cc, &self.registry)?,
        };
        if !fetch.status.is_ok() {
            return Err(EngineError::Upstream { url: url.to_string(), status: fetch.status });
        }
        let doc = extract_article(&fetch.body, fetch.declared_encoding.as_deref(), url, None, fetch.fetched_at)?;
        let content_hash = hash_content(&doc);
        Ok(LoadedPage { fetch, doc, content_hash })
    }

    /// Fetch, extract, hash, sign, chain and store.
    pub fn stamp_url(&self, url: &str, owner: UserId, post_title: Option<String>) -> Result<StampOutcome, EngineError> {
        let page = self.load(url, None)?;
        self.stamp_page(&page, owner, post_title)
    }

    pub fn stamp_page(
        &self,
        page: &LoadedPage,
        owner: UserId,
        post_title: Option<String>,
    ) -> Result<StampOutcome, EngineError> {
        if let Some(record) = self.store.find_by_content_hash(&page.content_hash)? {
            return Ok(StampOutcome { record, created: false });
        }
        let now = self.clock.now();
        let core = StampCore::issue(page.content_hash, now, Some(&self.key));
        let country = self.origin_country(&page.doc.source_url, now);
        let (record, created) = self.store.put_stamp(NewStamp {
            doc: &page.doc,
            core,
            owner,
            post_title,
            raw_html: &page.fetch.body,
            country_of_origin: country,
        })?;
        if created {
            tracing::info!(id = record.id, hash = %record.core.content_hash, url = %record.url, "stamped");
        }
        Ok(StampOutcome { record, created })
    }

    fn origin_country(&self, url: &str, now: Instant) -> Option<String> {
        let provider = self.geo.as_deref()?;
        let host = parse_fetch_url(url).ok()?.host_str()?.to_string();
        match lookup_location(&host, self.store.as_ref(), provider, now) {
            Ok(loc) => Some(loc.country),
            Err(err) => {
                tracing::debug!(%err, %host, "origin country unresolved");
                None
            }
        }
    }

    /// Retries unanchored batches, then seals every pending stamp into a new
    /// batch. Concurrent calls fail fast with `SealInProgress`.
    pub fn seal_pending(&self) -> Result<SealOutcome, EngineError> {
        let _guard = self.seal_lock.try_acquire().map_err(|e| match e {
            AnchorError::SealInProgress => EngineError::SealInProgress,
            other => EngineError::Setup(other.to_string()),
        })?;
        let now = self.clock.now();
        let mut outcome = SealOutcome::default();
        for mut batch in self.store.unanchored_batches()? {
            let ok = retry_anchor(&mut batch, self.ledger.as_ref(), now);
            if ok {
                self.store.update_batch_status(&batch)?;
            }
            outcome.retried.push((batch.batch_id, ok));
        }
        let pending = self.store.pending_anchor()?;
        if pending.is_empty() {
            return Ok(outcome);
        }
        let (ids, leaves): (Vec<RecordId>, Vec<Hash256>) = pending.into_iter().unzip();
        let batch_id = self.store.next_batch_id()?;
        if let Some((batch, _proofs)) = seal_batch(batch_id, &leaves, self.ledger.as_ref(), now) {
            self.store.record_batch(&batch, &ids)?;
            tracing::info!(batch = batch.batch_id, leaves = leaves.len(), address = %batch.anchor_address, status = %batch.status, "sealed batch");
            outcome.sealed = Some(batch);
        }
        Ok(outcome)
    }

    pub fn record(&self, id: RecordId) -> Result<StampRecord, EngineError> {
        self.store
            .get_stamp(id)?
            .ok_or_else(|| EngineError::NotFound(format!("stamp {id}")))
    }

    /// Portable evidence for one record.
    pub fn receipt(&self, id: RecordId) -> Result<Receipt, EngineError> {
        let record = self.record(id)?;
        let text = self.store.snapshot_text(&record)?;
        let anchor = self.store.proof_for_record(id)?;
        let public_key = record.core.signature.as_ref().map(|_| self.key.public_key());
        Ok(Receipt::new(&record, text, public_key, anchor))
    }

    /// Verifies a stored record against its snapshot, signature, chain link
    /// and (once sealed) its batch.
    pub fn verify_record(&self, id: RecordId) -> Result<(VerificationReport, Receipt), EngineError> {
        let receipt = self.receipt(id)?;
        Ok((receipt.verify(None), receipt))
    }

    pub fn compare(&self, old: RecordId, target: &CompareTarget) -> Result<ComparisonView, EngineError> {
        let old_record = self.record(old)?;
        let old_text = self.store.snapshot_text(&old_record)?;
        let old_version = Version {
            text: &old_text,
            content_hash: old_record.core.content_hash,
            label: version_label(&old_record),
        };
        let (new_text, new_hash, new_label) = match target {
            CompareTarget::Record(id) => {
                let rec = self.record(*id)?;
                (self.store.snapshot_text(&rec)?, rec.core.content_hash, version_label(&rec))
            }
            CompareTarget::Current => {
                let page = self.load(&old_record.url, None)?;
                let label = format!("current ({})", time::rfc3339(page.fetch.fetched_at));
                (page.doc.canonical_text, page.content_hash, label)
            }
            CompareTarget::Country(cc) => {
                let cc = cc.trim().to_ascii_uppercase();
                if !self.registry.contains(&cc) {
                    return Err(EngineError::Input(format!("no proxies configured for {cc}")));
                }
                let page = self.load(&old_record.url, Some(&cc))?;
                let label = format!("{cc} ({})", time::rfc3339(page.fetch.fetched_at));
                (page.doc.canonical_text, page.content_hash, label)
            }
        };
        let new_version = Version { text: &new_text, content_hash: new_hash, label: new_label };
        Ok(compare_versions(&old_version, &new_version))
    }

    /// Probes `url` from each country and stores one verdict per country.
    /// A country is blocked when none of its quorum endpoints returns content.
    pub fn block_check(&self, url: &str, countries: &[String]) -> Result<Vec<BlockResult>, EngineError> {
        parse_fetch_url(url)?;
        if countries.is_empty() {
            return Err(EngineError::Input("at least one country is required".into()));
        }
        let countries: Vec<String> = countries.iter().map(|c| c.trim().to_ascii_uppercase()).collect();
        if let Some(missing) = countries.iter().find(|c| !self.registry.contains(c)) {
            return Err(EngineError::Input(format!("no proxies configured for {missing}")));
        }
        let checked_at = self.clock.now();
        let verdicts: Vec<(String, bool)> = std::thread::scope(|scope| {
            let handles: Vec<_> = countries
                .iter()
                .map(|cc| {
                    scope.spawn(move || {
                        let reachable = matches!(
                            self.fetcher.fetch_via(url, cc, &self.registry),
                            Ok(ref r) if r.status.is_ok()
                        );
                        (cc.clone(), !reachable)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("probe thread panicked")).collect()
        });
        let post_id = self.store.latest_version(url)?.map(|r| r.id);
        verdicts
            .into_iter()
            .map(|(cc, blocked)| Ok(self.store.insert_block(url, post_id, &cc, blocked, checked_at)?))
            .collect()
    }

    /// Creates a monitoring task. Restamp tasks take a baseline stamp right
    /// away; every task's first check is one period after creation.
    pub fn create_schedule(&self, new: &NewSchedule, owner: UserId) -> Result<ScheduleTask, EngineError> {
        new.validate()?;
        parse_fetch_url(&new.url)?;
        if let Some(cc) = &new.country {
            if !self.registry.contains(cc) {
                return Err(EngineError::Input(format!("no proxies configured for {}", cc.to_ascii_uppercase())));
            }
        }
        let now = self.clock.now();
        let mut linked = self.store.latest_version(&new.url)?.map(|r| r.id);
        if new.mode == ScheduleMode::Restamp {
            match self.stamp_url(&new.url, owner, new.post_title.clone()) {
                Ok(outcome) => linked = Some(outcome.record.id),
                Err(err) => {
                    tracing::warn!(%err, url = %new.url, "baseline stamp failed; first check runs on the next tick");
                    return Ok(self.store.add_schedule(new, owner, linked, None)?);
                }
            }
        }
        Ok(self.store.add_schedule(new, owner, linked, Some(now))?)
    }

    /// Time until a schedule is due again, given its frequency.
    pub fn period(task: &ScheduleTask) -> Duration {
        Duration::days(i64::from(task.frequency_days))
    }
}

fn version_label(record: &StampRecord) -> String {
    format!("#{} ({})", record.id, time::rfc3339(record.created_at))
}
