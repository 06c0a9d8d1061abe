//! Single-file relational store plus a content-addressed snapshot directory.

mod models;
mod snapshot;
mod url;

pub use models::{
    permissions, BlockResult, CountryStat, NewSchedule, Page, RecordId, ScheduleMode, ScheduleTask,
    StampRecord, UserAccount, UserId, MAX_FREQUENCY_DAYS, MIN_FREQUENCY_DAYS,
};
pub use snapshot::SnapshotDir;
pub use url::{domain_of, normalize_url};

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use rusqlite::functions::FunctionFlags;
use rusqlite::types::Type;
use rusqlite::{params, Connection, OptionalExtension, Row, TransactionBehavior};

use crate::anchor::{AnchorBatch, AnchorReceipt, Amount, BatchStatus, InclusionProof};
use crate::hash::Hash256;
use crate::ingest::{CanonicalDocument, GeoLocation, LocationCache};
use crate::monitor::Notification;
use crate::stampcore::{self, StampCore, GENESIS};
use crate::time::{self, Instant};

pub const DEFAULT_PAGE_SIZE: u32 = 20;
pub const SYSTEM_USER: &str = "system";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("database: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("snapshot: {0}")]
    Io(#[from] std::io::Error),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid: {0}")]
    Invalid(String),
}

/// Everything `put_stamp` needs to create a record.
#[derive(Debug, Clone)]
pub struct NewStamp<'a> {
    pub doc: &'a CanonicalDocument,
    pub core: StampCore,
    pub owner: UserId,
    pub post_title: Option<String>,
    pub raw_html: &'a [u8],
    pub country_of_origin: Option<String>,
}

/// Search and browse filter. A query matches url, web title and post title
/// case-insensitively; the domain filter is exact.
#[derive(Debug, Clone, Default)]
pub struct SearchFilter {
    pub query: Option<String>,
    pub domain: Option<String>,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS users (
    id INTEGER PRIMARY KEY,
    username TEXT NOT NULL UNIQUE COLLATE NOCASE,
    email TEXT NOT NULL UNIQUE COLLATE NOCASE,
    password_digest TEXT NOT NULL,
    confirmed INTEGER NOT NULL DEFAULT 0,
    permissions INTEGER NOT NULL,
    member_since TEXT NOT NULL,
    last_seen TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS batches (
    id INTEGER PRIMARY KEY,
    merkle_root TEXT NOT NULL,
    anchor_address TEXT NOT NULL,
    txn_ref TEXT,
    amount INTEGER NOT NULL,
    sealed_at TEXT NOT NULL,
    status TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS posts (
    id INTEGER PRIMARY KEY,
    url TEXT NOT NULL,
    domain TEXT NOT NULL,
    web_title TEXT NOT NULL,
    post_title TEXT,
    content_hash TEXT NOT NULL UNIQUE,
    stamped_at TEXT NOT NULL,
    stamp_hash TEXT NOT NULL,
    signature BLOB,
    tsa_key_id TEXT,
    prev_chain TEXT NOT NULL,
    chain_hash TEXT NOT NULL,
    owner INTEGER NOT NULL REFERENCES users(id),
    created_at TEXT NOT NULL,
    snapshot_ref TEXT NOT NULL,
    batch_id INTEGER REFERENCES batches(id),
    country TEXT
);
CREATE INDEX IF NOT EXISTS posts_url ON posts(url, created_at);
CREATE INDEX IF NOT EXISTS posts_created ON posts(created_at);
CREATE INDEX IF NOT EXISTS posts_pending ON posts(batch_id) WHERE batch_id IS NULL;
CREATE TABLE IF NOT EXISTS batch_leaves (
    batch_id INTEGER NOT NULL REFERENCES batches(id),
    position INTEGER NOT NULL,
    post_id INTEGER NOT NULL REFERENCES posts(id),
    stamp_hash TEXT NOT NULL,
    PRIMARY KEY (batch_id, position)
);
CREATE TABLE IF NOT EXISTS schedules (
    id INTEGER PRIMARY KEY,
    url TEXT NOT NULL,
    post_title TEXT,
    frequency_days INTEGER NOT NULL CHECK (frequency_days BETWEEN 1 AND 30),
    email TEXT,
    country TEXT,
    mode TEXT NOT NULL,
    last_run TEXT,
    owner INTEGER NOT NULL REFERENCES users(id),
    linked_post INTEGER REFERENCES posts(id)
);
CREATE TABLE IF NOT EXISTS blocks (
    id INTEGER PRIMARY KEY,
    url TEXT NOT NULL,
    post_id INTEGER REFERENCES posts(id),
    country TEXT NOT NULL,
    blocked INTEGER NOT NULL,
    checked_at TEXT NOT NULL,
    UNIQUE (url, country, checked_at)
);
CREATE TABLE IF NOT EXISTS locations (
    host TEXT PRIMARY KEY,
    host_ip TEXT NOT NULL,
    country TEXT NOT NULL,
    latitude REAL NOT NULL,
    longitude REAL NOT NULL,
    resolved_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS outbox (
    id INTEGER PRIMARY KEY,
    payload TEXT NOT NULL
);
";

const POST_COLUMNS: &str = "id, url, domain, web_title, post_title, content_hash, stamped_at, stamp_hash, \
     signature, tsa_key_id, prev_chain, chain_hash, owner, created_at, snapshot_ref, batch_id, country";

pub struct Store {
    writer: Mutex<Connection>,
    reader: Mutex<Connection>,
    snapshots: SnapshotDir,
    db_path: PathBuf,
    page_size: u32,
}

impl Store {
    pub fn open(db_path: impl Into<PathBuf>, snapshot_root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let db_path = db_path.into();
        if let Some(parent) = db_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let writer = connect(&db_path)?;
        writer.execute_batch(SCHEMA)?;
        let reader = connect(&db_path)?;
        Ok(Self {
            writer: Mutex::new(writer),
            reader: Mutex::new(reader),
            snapshots: SnapshotDir::open(snapshot_root)?,
            db_path,
            page_size: DEFAULT_PAGE_SIZE,
        })
    }

    pub fn with_page_size(mut self, page_size: u32) -> Self {
        self.page_size = page_size.max(1);
        self
    }

    pub fn page_size(&self) -> u32 {
        self.page_size
    }

    pub fn db_path(&self) -> &Path {
        &self.db_path
    }

    pub fn snapshots(&self) -> &SnapshotDir {
        &self.snapshots
    }

    fn write(&self) -> MutexGuard<'_, Connection> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn read(&self) -> MutexGuard<'_, Connection> {
        self.reader.lock().unwrap_or_else(|e| e.into_inner())
    }

    // ---- stamps ----

    /// Inserts a stamp unless its content hash is already stored, in which
    /// case the existing record comes back with `created = false`. New
    /// records are relinked onto the current chain head under the writer
    /// lock, so the chain follows insertion order.
    pub fn put_stamp(&self, new: NewStamp<'_>) -> Result<(StampRecord, bool), StoreError> {
        let NewStamp { doc, mut core, owner, post_title, raw_html, country_of_origin } = new;
        if stampcore::hash_content(doc) != core.content_hash {
            return Err(StoreError::Integrity("content hash does not match the document".into()));
        }
        if stampcore::derive_stamp_hash(&core.content_hash, core.stamped_at) != core.stamp_hash {
            return Err(StoreError::Integrity("stamp hash does not match content hash and time".into()));
        }
        let url = normalize_url(&doc.source_url)?;
        let domain = domain_of(&url)?;
        let post_title = post_title.map(|t| t.trim().to_string()).filter(|t| !t.is_empty());

        let mut conn = self.write();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let existing = tx
            .query_row(
                &format!("SELECT {POST_COLUMNS} FROM posts WHERE content_hash = ?1"),
                [core.content_hash.to_hex()],
                post_from_row,
            )
            .optional()?;
        if let Some(record) = existing {
            return Ok((record, false));
        }
        let head = tx
            .query_row("SELECT chain_hash FROM posts ORDER BY id DESC LIMIT 1", [], |r| hash_col(r, 0))
            .optional()?
            .unwrap_or(GENESIS);
        core.link(head);
        let snapshot_ref = self.snapshots.put(&core.content_hash, &doc.canonical_text, raw_html)?;
        let created_at = core.stamped_at;
        tx.execute(
            "INSERT INTO posts (url, domain, web_title, post_title, content_hash, stamped_at, stamp_hash, \
             signature, tsa_key_id, prev_chain, chain_hash, owner, created_at, snapshot_ref, batch_id, country) \
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13, ?14, NULL, ?15)",
            params![
                url,
                domain,
                doc.web_title,
                post_title,
                core.content_hash.to_hex(),
                time::rfc3339(core.stamped_at),
                core.stamp_hash.to_hex(),
                core.signature,
                core.tsa_key_id,
                core.prev_chain.to_hex(),
                core.chain_hash.to_hex(),
                owner,
                time::rfc3339(created_at),
                snapshot_ref,
                country_of_origin,
            ],
        )?;
        let id = tx.last_insert_rowid();
        tx.commit()?;
        Ok((
            StampRecord {
                id,
                url,
                domain,
                web_title: doc.web_title.clone(),
                post_title,
                core,
                owner,
                created_at,
                snapshot_ref,
                batch_id: None,
                country_of_origin,
            },
            true,
        ))
    }

    pub fn get_stamp(&self, id: RecordId) -> Result<Option<StampRecord>, StoreError> {
        let conn = self.read();
        Ok(conn
            .query_row(&format!("SELECT {POST_COLUMNS} FROM posts WHERE id = ?1"), [id], post_from_row)
            .optional()?)
    }

    pub fn find_by_content_hash(&self, hash: &Hash256) -> Result<Option<StampRecord>, StoreError> {
        let conn = self.read();
        Ok(conn
            .query_row(
                &format!("SELECT {POST_COLUMNS} FROM posts WHERE content_hash = ?1"),
                [hash.to_hex()],
                post_from_row,
            )
            .optional()?)
    }

    pub fn count_stamps(&self) -> Result<u64, StoreError> {
        let conn = self.read();
        Ok(conn.query_row("SELECT COUNT(*) FROM posts", [], |r| r.get::<_, i64>(0))? as u64)
    }

    /// Every record in insertion order.
    pub fn all_stamps(&self) -> Result<Vec<StampRecord>, StoreError> {
        let conn = self.read();
        let mut stmt = conn.prepare(&format!("SELECT {POST_COLUMNS} FROM posts ORDER BY id"))?;
        let rows = stmt.query_map([], post_from_row)?.collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    /// Recomputes the chain over every record and reports whether each stored
    /// link matches.
    pub fn audit_chain(&self) -> Result<Vec<bool>, StoreError> {
        let records = self.all_stamps()?;
        Ok(stampcore::audit_chain(records.iter().map(|r| &r.core)))
    }

    pub fn snapshot_text(&self, record: &StampRecord) -> Result<String, StoreError> {
        Ok(self.snapshots.read_text(&record.snapshot_ref)?)
    }

    /// All versions of a URL, oldest first.
    pub fn versions_of(&self, url: &str) -> Result<Vec<StampRecord>, StoreError> {
        let key = normalize_url(url)?;
        let conn = self.read();
        let mut stmt =
            conn.prepare(&format!("SELECT {POST_COLUMNS} FROM posts WHERE url = ?1 ORDER BY created_at, id"))?;
        let rows = stmt.query_map([key], post_from_row)?.collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    pub fn latest_version(&self, url: &str) -> Result<Option<StampRecord>, StoreError> {
        let key = normalize_url(url)?;
        let conn = self.read();
        Ok(conn
            .query_row(
                &format!("SELECT {POST_COLUMNS} FROM posts WHERE url = ?1 ORDER BY created_at DESC, id DESC LIMIT 1"),
                [key],
                post_from_row,
            )
            .optional()?)
    }

    /// Newest first, `page` counted from 1. No query and no domain yields an
    /// empty page.
    pub fn search(&self, filter: &SearchFilter, page: u32) -> Result<Page<StampRecord>, StoreError> {
        let page = page.max(1);
        let per_page = self.page_size;
        let query = filter.query.as_deref().map(str::trim).filter(|q| !q.is_empty());
        let domain = filter.domain.as_deref().map(str::trim).filter(|d| !d.is_empty());
        if query.is_none() && domain.is_none() {
            return Ok(Page { items: Vec::new(), page, per_page, total: 0 });
        }
        let needle = query.map(casefold);
        let domain = domain.map(str::to_lowercase);
        let condition = "(?1 IS NULL OR instr(casefold(url), ?1) > 0 OR instr(casefold(web_title), ?1) > 0 \
             OR instr(casefold(coalesce(post_title, '')), ?1) > 0) AND (?2 IS NULL OR domain = ?2)";
        let conn = self.read();
        let total: i64 = conn.query_row(
            &format!("SELECT COUNT(*) FROM posts WHERE {condition}"),
            params![needle, domain],
            |r| r.get(0),
        )?;
        let mut stmt = conn.prepare(&format!(
            "SELECT {POST_COLUMNS} FROM posts WHERE {condition} ORDER BY created_at DESC, id DESC LIMIT ?3 OFFSET ?4"
        ))?;
        let offset = i64::from(page - 1) * i64::from(per_page);
        let items = stmt
            .query_map(params![needle, domain, per_page, offset], post_from_row)?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Page { items, page, per_page, total: total as u64 })
    }

    /// Distinct domains, ascending.
    pub fn list_domains(&self) -> Result<Vec<String>, StoreError> {
        let conn = self.read();
        let mut stmt = conn.prepare("SELECT DISTINCT lower(domain) AS d FROM posts ORDER BY d")?;
        let rows = stmt.query_map([], |r| r.get(0))?.collect::<Result<Vec<String>, _>>()?;
        Ok(rows)
    }

    /// Records per origin country, largest share first. Unresolved origins
    /// fall into an `unknown` bucket.
    pub fn stats_by_country(&self) -> Result<Vec<CountryStat>, StoreError> {
        let conn = self.read();
        let mut stmt = conn.prepare(
            "SELECT coalesce(country, 'unknown') AS c, COUNT(*) AS n FROM posts GROUP BY c ORDER BY n DESC, c",
        )?;
        let groups = stmt
            .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as u64)))?
            .collect::<Result<Vec<_>, _>>()?;
        let total: u64 = groups.iter().map(|(_, n)| n).sum();
        Ok(groups
            .into_iter()
            .map(|(country, record_count)| {
                // Integer hundredths keep the rounding exact: half up.
                let hundredths = (record_count * 10_000 * 2 + total) / (total * 2);
                CountryStat {
                    country,
                    record_count,
                    percentage: hundredths as f64 / 100.0,
                    percentage_text: format!("{}.{:02}", hundredths / 100, hundredths % 100),
                }
            })
            .collect())
    }

    // ---- anchoring ----

    /// Unbatched records in insertion order.
    pub fn pending_anchor(&self) -> Result<Vec<(RecordId, Hash256)>, StoreError> {
        let conn = self.read();
        let mut stmt = conn.prepare("SELECT id, stamp_hash FROM posts WHERE batch_id IS NULL ORDER BY id")?;
        let rows = stmt
            .query_map([], |r| Ok((r.get(0)?, hash_col(r, 1)?)))?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    pub fn next_batch_id(&self) -> Result<u64, StoreError> {
        let conn = self.read();
        let max: Option<i64> = conn.query_row("SELECT MAX(id) FROM batches", [], |r| r.get(0))?;
        Ok(max.map_or(1, |m| m as u64 + 1))
    }

    /// Stores a sealed batch and points its records at it. `records[i]` must
    /// be the record whose stamp hash is `batch.leaves[i]`.
    pub fn record_batch(&self, batch: &AnchorBatch, records: &[RecordId]) -> Result<(), StoreError> {
        if records.len() != batch.leaves.len() {
            return Err(StoreError::Integrity("one record per leaf required".into()));
        }
        let mut conn = self.write();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        tx.execute(
            "INSERT INTO batches (id, merkle_root, anchor_address, txn_ref, amount, sealed_at, status) \
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            params![
                batch.batch_id as i64,
                batch.merkle_root.to_hex(),
                batch.anchor_address,
                batch.txn_ref,
                batch.amount.0 as i64,
                time::rfc3339(batch.sealed_at),
                batch.status.to_string(),
            ],
        )?;
        for (position, (record, leaf)) in records.iter().zip(&batch.leaves).enumerate() {
            let updated = tx.execute(
                "UPDATE posts SET batch_id = ?1 WHERE id = ?2 AND batch_id IS NULL AND stamp_hash = ?3",
                params![batch.batch_id as i64, record, leaf.to_hex()],
            )?;
            if updated != 1 {
                return Err(StoreError::Integrity(format!("record {record} is not a pending stamp of leaf {position}")));
            }
            tx.execute(
                "INSERT INTO batch_leaves (batch_id, position, post_id, stamp_hash) VALUES (?1, ?2, ?3, ?4)",
                params![batch.batch_id as i64, position as i64, record, leaf.to_hex()],
            )?;
        }
        tx.commit()?;
        Ok(())
    }

    /// Persists a batch's anchoring outcome.
    pub fn update_batch_status(&self, batch: &AnchorBatch) -> Result<(), StoreError> {
        let conn = self.write();
        let n = conn.execute(
            "UPDATE batches SET status = ?1, txn_ref = ?2 WHERE id = ?3",
            params![batch.status.to_string(), batch.txn_ref, batch.batch_id as i64],
        )?;
        if n == 0 {
            return Err(StoreError::NotFound(format!("batch {}", batch.batch_id)));
        }
        Ok(())
    }

    pub fn get_batch(&self, batch_id: u64) -> Result<Option<AnchorBatch>, StoreError> {
        let conn = self.read();
        load_batch(&conn, batch_id)
    }

    /// Batches sealed but not yet accepted by the ledger.
    pub fn unanchored_batches(&self) -> Result<Vec<AnchorBatch>, StoreError> {
        let conn = self.read();
        let ids = {
            let mut stmt = conn.prepare("SELECT id FROM batches WHERE status = 'sealed' ORDER BY id")?;
            let ids = stmt.query_map([], |r| r.get::<_, i64>(0))?.collect::<Result<Vec<_>, _>>()?;
            ids
        };
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.extend(load_batch(&conn, id as u64)?);
        }
        Ok(out)
    }

    pub fn last_sealed_at(&self) -> Result<Option<Instant>, StoreError> {
        let conn = self.read();
        let raw: Option<String> = conn.query_row("SELECT MAX(sealed_at) FROM batches", [], |r| r.get(0))?;
        raw.map(|s| parse_time(&s)).transpose()
    }

    /// Inclusion proof and batch receipt for an anchored record.
    pub fn proof_for_record(&self, id: RecordId) -> Result<Option<(InclusionProof, AnchorReceipt)>, StoreError> {
        let conn = self.read();
        let found: Option<(i64, i64)> = conn
            .query_row(
                "SELECT batch_id, position FROM batch_leaves WHERE post_id = ?1",
                [id],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?;
        let Some((batch_id, position)) = found else {
            return Ok(None);
        };
        let batch = load_batch(&conn, batch_id as u64)?
            .ok_or_else(|| StoreError::Integrity(format!("batch {batch_id} missing")))?;
        let proof = batch
            .proof(position as usize)
            .map_err(|e| StoreError::Integrity(e.to_string()))?;
        Ok(Some((proof, batch.receipt())))
    }

    // ---- users ----

    pub fn create_user(
        &self,
        username: &str,
        email: &str,
        password_digest: &str,
        permissions: u32,
        now: Instant,
    ) -> Result<UserAccount, StoreError> {
        let username = username.trim();
        let email = email.trim();
        if username.is_empty() {
            return Err(StoreError::Invalid("username must not be empty".into()));
        }
        if !email.contains('@') {
            return Err(StoreError::Invalid(format!("invalid email {email:?}")));
        }
        let now = time::truncate(now);
        let conn = self.write();
        let taken: Option<String> = conn
            .query_row(
                "SELECT CASE WHEN username = ?1 THEN 'username' ELSE 'email' END FROM users \
                 WHERE username = ?1 OR email = ?2 LIMIT 1",
                params![username, email],
                |r| r.get(0),
            )
            .optional()?;
        if let Some(field) = taken {
            return Err(StoreError::Conflict(format!("{field} already registered")));
        }
        conn.execute(
            "INSERT INTO users (username, email, password_digest, confirmed, permissions, member_since, last_seen) \
             VALUES (?1, ?2, ?3, 0, ?4, ?5, ?5)",
            params![username, email, password_digest, permissions, time::rfc3339(now)],
        )?;
        Ok(UserAccount {
            id: conn.last_insert_rowid(),
            username: username.to_string(),
            email: email.to_string(),
            password_digest: password_digest.to_string(),
            confirmed: false,
            permissions,
            member_since: now,
            last_seen: now,
        })
    }

    pub fn get_user(&self, id: UserId) -> Result<Option<UserAccount>, StoreError> {
        let conn = self.read();
        Ok(conn
            .query_row(
                "SELECT id, username, email, password_digest, confirmed, permissions, member_since, last_seen \
                 FROM users WHERE id = ?1",
                [id],
                user_from_row,
            )
            .optional()?)
    }

    /// Looks a user up by username or email, case-insensitively.
    pub fn find_user(&self, login: &str) -> Result<Option<UserAccount>, StoreError> {
        let conn = self.read();
        Ok(conn
            .query_row(
                "SELECT id, username, email, password_digest, confirmed, permissions, member_since, last_seen \
                 FROM users WHERE username = ?1 OR email = ?1 LIMIT 1",
                [login.trim()],
                user_from_row,
            )
            .optional()?)
    }

    /// Returns whether the account changed state.
    pub fn confirm_user(&self, id: UserId) -> Result<bool, StoreError> {
        let conn = self.write();
        let exists: bool = conn.query_row("SELECT COUNT(*) FROM users WHERE id = ?1", [id], |r| r.get(0))?;
        if !exists {
            return Err(StoreError::NotFound(format!("user {id}")));
        }
        Ok(conn.execute("UPDATE users SET confirmed = 1 WHERE id = ?1 AND confirmed = 0", [id])? == 1)
    }

    pub fn set_permissions(&self, id: UserId, permissions: u32) -> Result<(), StoreError> {
        let conn = self.write();
        if conn.execute("UPDATE users SET permissions = ?1 WHERE id = ?2", params![permissions, id])? == 0 {
            return Err(StoreError::NotFound(format!("user {id}")));
        }
        Ok(())
    }

    pub fn touch_user(&self, id: UserId, now: Instant) -> Result<(), StoreError> {
        let conn = self.write();
        conn.execute("UPDATE users SET last_seen = ?1 WHERE id = ?2", params![time::rfc3339(now), id])?;
        Ok(())
    }

    /// The confirmed administrator account that owns operator-issued stamps.
    pub fn ensure_system_user(&self, now: Instant) -> Result<UserAccount, StoreError> {
        if let Some(user) = self.find_user(SYSTEM_USER)? {
            return Ok(user);
        }
        // No password can hash to "!", so the account cannot log in.
        let user = self.create_user(SYSTEM_USER, "system@localhost", "!", permissions::ADMINISTRATOR, now)?;
        self.confirm_user(user.id)?;
        Ok(UserAccount { confirmed: true, ..user })
    }

    // ---- schedules ----

    pub fn add_schedule(
        &self,
        new: &NewSchedule,
        owner: UserId,
        linked_post: Option<RecordId>,
        last_run: Option<Instant>,
    ) -> Result<ScheduleTask, StoreError> {
        new.validate()?;
        let url = normalize_url(&new.url)?;
        let country = new.country.as_deref().map(|c| c.trim().to_ascii_uppercase());
        let email = new.email.as_deref().map(str::trim).filter(|e| !e.is_empty()).map(str::to_string);
        let last_run = last_run.map(time::truncate);
        let conn = self.write();
        conn.execute(
            "INSERT INTO schedules (url, post_title, frequency_days, email, country, mode, last_run, owner, linked_post) \
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
            params![
                url,
                new.post_title,
                new.frequency_days,
                email,
                country,
                new.mode.to_string(),
                last_run.map(time::rfc3339),
                owner,
                linked_post,
            ],
        )?;
        Ok(ScheduleTask {
            id: conn.last_insert_rowid(),
            url,
            post_title: new.post_title.clone(),
            frequency_days: new.frequency_days,
            email,
            country,
            mode: new.mode,
            last_run,
            owner,
            linked_post,
        })
    }

    pub fn get_schedule(&self, id: i64) -> Result<Option<ScheduleTask>, StoreError> {
        let conn = self.read();
        Ok(conn
            .query_row(
                "SELECT id, url, post_title, frequency_days, email, country, mode, last_run, owner, linked_post \
                 FROM schedules WHERE id = ?1",
                [id],
                schedule_from_row,
            )
            .optional()?)
    }

    pub fn list_schedules(&self) -> Result<Vec<ScheduleTask>, StoreError> {
        let conn = self.read();
        let mut stmt = conn.prepare(
            "SELECT id, url, post_title, frequency_days, email, country, mode, last_run, owner, linked_post \
             FROM schedules ORDER BY id",
        )?;
        let rows = stmt.query_map([], schedule_from_row)?.collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    pub fn delete_schedule(&self, id: i64) -> Result<bool, StoreError> {
        let conn = self.write();
        Ok(conn.execute("DELETE FROM schedules WHERE id = ?1", [id])? == 1)
    }

    pub fn set_last_run(&self, id: i64, at: Instant) -> Result<(), StoreError> {
        let conn = self.write();
        conn.execute("UPDATE schedules SET last_run = ?1 WHERE id = ?2", params![time::rfc3339(at), id])?;
        Ok(())
    }

    pub fn set_linked_post(&self, id: i64, post: RecordId) -> Result<(), StoreError> {
        let conn = self.write();
        conn.execute("UPDATE schedules SET linked_post = ?1 WHERE id = ?2", params![post, id])?;
        Ok(())
    }

    // ---- block results ----

    pub fn insert_block(
        &self,
        url: &str,
        post_id: Option<RecordId>,
        country: &str,
        blocked: bool,
        checked_at: Instant,
    ) -> Result<BlockResult, StoreError> {
        let url = normalize_url(url)?;
        let country = country.trim().to_ascii_uppercase();
        let checked_at = time::truncate(checked_at);
        let conn = self.write();
        conn.execute(
            "INSERT INTO blocks (url, post_id, country, blocked, checked_at) VALUES (?1, ?2, ?3, ?4, ?5) \
             ON CONFLICT (url, country, checked_at) DO UPDATE SET blocked = excluded.blocked, post_id = excluded.post_id",
            params![url, post_id, country, blocked, time::rfc3339(checked_at)],
        )?;
        let id = conn.query_row(
            "SELECT id FROM blocks WHERE url = ?1 AND country = ?2 AND checked_at = ?3",
            params![url, country, time::rfc3339(checked_at)],
            |r| r.get(0),
        )?;
        Ok(BlockResult { id, url, post_id, country, blocked, checked_at })
    }

    /// Latest verdict per country for a URL, ordered by country.
    pub fn block_map(&self, url: &str) -> Result<Vec<BlockResult>, StoreError> {
        let url = normalize_url(url)?;
        let conn = self.read();
        let mut stmt = conn.prepare(
            "SELECT b.id, b.url, b.post_id, b.country, b.blocked, b.checked_at FROM blocks b \
             WHERE b.url = ?1 AND b.id = (SELECT id FROM blocks WHERE url = b.url AND country = b.country \
             ORDER BY checked_at DESC, id DESC LIMIT 1) ORDER BY b.country",
        )?;
        let rows = stmt.query_map([url], block_from_row)?.collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    pub fn get_block(&self, id: i64) -> Result<Option<BlockResult>, StoreError> {
        let conn = self.read();
        Ok(conn
            .query_row(
                "SELECT id, url, post_id, country, blocked, checked_at FROM blocks WHERE id = ?1",
                [id],
                block_from_row,
            )
            .optional()?)
    }

    // ---- outbox ----

    pub fn enqueue_notification(&self, notification: &Notification) -> Result<i64, StoreError> {
        let payload = serde_json::to_string(notification).map_err(|e| StoreError::Invalid(e.to_string()))?;
        let conn = self.write();
        conn.execute("INSERT INTO outbox (payload) VALUES (?1)", [payload])?;
        Ok(conn.last_insert_rowid())
    }

    pub fn queued_notifications(&self) -> Result<Vec<(i64, Notification)>, StoreError> {
        let conn = self.read();
        let mut stmt = conn.prepare("SELECT id, payload FROM outbox ORDER BY id")?;
        let rows = stmt
            .query_map([], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?)))?
            .collect::<Result<Vec<_>, _>>()?;
        rows.into_iter()
            .map(|(id, payload)| {
                serde_json::from_str(&payload)
                    .map(|n| (id, n))
                    .map_err(|e| StoreError::Integrity(format!("outbox row {id}: {e}")))
            })
            .collect()
    }

    pub fn remove_notification(&self, id: i64) -> Result<(), StoreError> {
        let conn = self.write();
        conn.execute("DELETE FROM outbox WHERE id = ?1", [id])?;
        Ok(())
    }
}

impl LocationCache for Store {
    fn get(&self, host: &str) -> Option<GeoLocation> {
        let conn = self.read();
        conn.query_row(
            "SELECT host_ip, country, latitude, longitude, resolved_at FROM locations WHERE host = ?1",
            [host],
            |r| {
                Ok(GeoLocation {
                    host_ip: r.get(0)?,
                    country: r.get(1)?,
                    latitude: r.get(2)?,
                    longitude: r.get(3)?,
                    resolved_at: time_col(r, 4)?,
                })
            },
        )
        .optional()
        .unwrap_or_else(|err| {
            tracing::warn!(%err, host, "location cache read failed");
            None
        })
    }

    fn put(&self, host: &str, location: &GeoLocation) {
        let conn = self.write();
        let result = conn.execute(
            "INSERT OR REPLACE INTO locations (host, host_ip, country, latitude, longitude, resolved_at) \
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                host,
                location.host_ip,
                location.country,
                location.latitude,
                location.longitude,
                time::rfc3339(location.resolved_at),
            ],
        );
        if let Err(err) = result {
            tracing::warn!(%err, host, "location cache write failed");
        }
    }
}

fn connect(path: &Path) -> Result<Connection, StoreError> {
    let conn = Connection::open(path)?;
    conn.busy_timeout(std::time::Duration::from_secs(10))?;
    conn.pragma_update(None, "journal_mode", "WAL")?;
    conn.pragma_update(None, "foreign_keys", "ON")?;
    conn.pragma_update(None, "synchronous", "NORMAL")?;
    conn.create_scalar_function(
        "casefold",
        1,
        FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC,
        |ctx| {
            let raw: Option<String> = ctx.get(0)?;
            Ok(raw.map(|s| casefold(&s)))
        },
    )?;
    Ok(conn)
}

fn casefold(s: &str) -> String {
    s.to_lowercase()
}

fn conversion_error(idx: usize, err: impl std::error::Error + Send + Sync + 'static) -> rusqlite::Error {
    rusqlite::Error::FromSqlConversionFailure(idx, Type::Text, Box::new(err))
}

fn hash_col(row: &Row<'_>, idx: usize) -> rusqlite::Result<Hash256> {
    let raw: String = row.get(idx)?;
    Hash256::from_hex(&raw).map_err(|e| conversion_error(idx, e))
}

fn time_col(row: &Row<'_>, idx: usize) -> rusqlite::Result<Instant> {
    let raw: String = row.get(idx)?;
    time::parse_rfc3339(&raw).map_err(|e| conversion_error(idx, e))
}

fn opt_time_col(row: &Row<'_>, idx: usize) -> rusqlite::Result<Option<Instant>> {
    let raw: Option<String> = row.get(idx)?;
    raw.map(|s| time::parse_rfc3339(&s).map_err(|e| conversion_error(idx, e)))
        .transpose()
}

fn parse_time(raw: &str) -> Result<Instant, StoreError> {
    time::parse_rfc3339(raw).map_err(|e| StoreError::Integrity(format!("bad timestamp {raw:?}: {e}")))
}

fn post_from_row(row: &Row<'_>) -> rusqlite::Result<StampRecord> {
    Ok(StampRecord {
        id: row.get(0)?,
        url: row.get(1)?,
        domain: row.get(2)?,
        web_title: row.get(3)?,
        post_title: row.get(4)?,
        core: StampCore {
            content_hash: hash_col(row, 5)?,
            stamped_at: time_col(row, 6)?,
            stamp_hash: hash_col(row, 7)?,
            signature: row.get(8)?,
            tsa_key_id: row.get(9)?,
            prev_chain: hash_col(row, 10)?,
            chain_hash: hash_col(row, 11)?,
        },
        owner: row.get(12)?,
        created_at: time_col(row, 13)?,
        snapshot_ref: row.get(14)?,
        batch_id: row.get::<_, Option<i64>>(15)?.map(|b| b as u64),
        country_of_origin: row.get(16)?,
    })
}

fn user_from_row(row: &Row<'_>) -> rusqlite::Result<UserAccount> {
    Ok(UserAccount {
        id: row.get(0)?,
        username: row.get(1)?,
        email: row.get(2)?,
        password_digest: row.get(3)?,
        confirmed: row.get(4)?,
        permissions: row.get(5)?,
        member_since: time_col(row, 6)?,
        last_seen: time_col(row, 7)?,
    })
}

fn schedule_from_row(row: &Row<'_>) -> rusqlite::Result<ScheduleTask> {
    let mode: String = row.get(6)?;
    Ok(ScheduleTask {
        id: row.get(0)?,
        url: row.get(1)?,
        post_title: row.get(2)?,
        frequency_days: row.get(3)?,
        email: row.get(4)?,
        country: row.get(5)?,
        mode: mode.parse().map_err(|e| conversion_error(6, e))?,
        last_run: opt_time_col(row, 7)?,
        owner: row.get(8)?,
        linked_post: row.get(9)?,
    })
}

fn block_from_row(row: &Row<'_>) -> rusqlite::Result<BlockResult> {
    Ok(BlockResult {
        id: row.get(0)?,
        url: row.get(1)?,
        post_id: row.get(2)?,
        country: row.get(3)?,
        blocked: row.get(4)?,
        checked_at: time_col(row, 5)?,
    })
}

fn load_batch(conn: &Connection, batch_id: u64) -> Result<Option<AnchorBatch>, StoreError> {
    let head = conn
        .query_row(
            "SELECT merkle_root, anchor_address, txn_ref, amount, sealed_at, status FROM batches WHERE id = ?1",
            [batch_id as i64],
            |r| {
                Ok((
                    hash_col(r, 0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, Option<String>>(2)?,
                    r.get::<_, i64>(3)?,
                    time_col(r, 4)?,
                    r.get::<_, String>(5)?,
                ))
            },
        )
        .optional()?;
    let Some((merkle_root, anchor_address, txn_ref, amount, sealed_at, status)) = head else {
        return Ok(None);
    };
    let mut stmt = conn.prepare("SELECT stamp_hash FROM batch_leaves WHERE batch_id = ?1 ORDER BY position")?;
    let leaves = stmt
        .query_map([batch_id as i64], |r| hash_col(r, 0))?
        .collect::<Result<Vec<_>, _>>()?;
    let status: BatchStatus = status.parse().map_err(StoreError::Integrity)?;
    Ok(Some(AnchorBatch {
        batch_id,
        leaves,
        merkle_root,
        anchor_address,
        txn_ref,
        amount: Amount(amount as u64),
        sealed_at,
        status,
    }))
}
