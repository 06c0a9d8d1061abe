//! Ledger backends that take anchor addresses.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::hash::Hash256;
use crate::time::{self, Instant};

/// Amount in satoshi. Rendered in BTC with eight decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Amount(pub u64);

impl Amount {
    pub const ONE_SATOSHI: Amount = Amount(1);
    const SAT_PER_BTC: u64 = 100_000_000;
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:08}", self.0 / Self::SAT_PER_BTC, self.0 % Self::SAT_PER_BTC)
    }
}

impl FromStr for Amount {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LedgerError::Corrupt(format!("bad amount {s:?}"));
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 8 {
            return Err(bad());
        }
        let whole: u64 = whole.parse().map_err(|_| bad())?;
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<8}").parse().map_err(|_| bad())?
        };
        Ok(Amount(whole * Self::SAT_PER_BTC + frac))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger unavailable: {0}")]
    Unavailable(String),
    #[error("ledger journal corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait LedgerBackend: Send + Sync {
    fn submit(&self, address: &str, amount: Amount, at: Instant) -> Result<String, LedgerError>;
    fn confirm(&self, txn_ref: &str) -> Result<bool, LedgerError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub txn_ref: String,
    pub address: String,
    pub amount: Amount,
    #[serde(with = "time::serde_secs")]
    pub at: Instant,
}

impl LedgerEntry {
    fn line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.txn_ref, self.address, self.amount, time::rfc3339(self.at))
    }

    fn parse(line: &str) -> Result<Self, LedgerError> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [txn_ref, address, amount, at] = fields[..] else {
            return Err(LedgerError::Corrupt(format!("expected 4 fields: {line:?}")));
        };
        Ok(Self {
            txn_ref: txn_ref.to_string(),
            address: address.to_string(),
            amount: amount.parse()?,
            at: time::parse_rfc3339(at).map_err(|e| LedgerError::Corrupt(e.to_string()))?,
        })
    }
}

/// Append-only local journal, one tab-separated record per line:
/// `txn_ref  address  amount  at`. The txn ref is SHA-256 of the other three
/// fields as they appear in the line.
pub struct JournalLedger {
    path: PathBuf,
    append: Mutex<()>,
}

impl JournalLedger {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LedgerError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            append: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> Result<Vec<LedgerEntry>, LedgerError> {
        let file = fs::File::open(&self.path)?;
        BufReader::new(file)
            .lines()
            .filter(|l| !matches!(l, Ok(l) if l.is_empty()))
            .map(|line| LedgerEntry::parse(&line?))
            .collect()
    }
}

impl LedgerBackend for JournalLedger {
    fn submit(&self, address: &str, amount: Amount, at: Instant) -> Result<String, LedgerError> {
        let at = time::truncate(at);
        let record = format!("{address}\t{amount}\t{}", time::rfc3339(at));
        let entry = LedgerEntry {
            txn_ref: Hash256::digest(record.as_bytes()).to_hex(),
            address: address.to_string(),
            amount,
            at,
        };
        let _guard = self.append.lock().unwrap_or_else(|e| e.into_inner());
        let mut file = OpenOptions::new().append(true).open(&self.path)?;
        writeln!(file, "{}", entry.line())?;
        file.sync_data()?;
        Ok(entry.txn_ref)
    }

    fn confirm(&self, txn_ref: &str) -> Result<bool, LedgerError> {
        Ok(self.entries()?.iter().any(|e| e.txn_ref == txn_ref))
    }
}

/// Client for a remote anchoring service that accepts
/// `Authorization: Token token=<token>`.
pub struct RemoteLedger {
    endpoint: String,
    token: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct RemoteSubmitResponse {
    txn_ref: String,
}

impl RemoteLedger {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: token.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        }
    }

    fn auth(&self) -> String {
        format!("Token token={}", self.token)
    }
}

impl LedgerBackend for RemoteLedger {
    fn submit(&self, address: &str, amount: Amount, at: Instant) -> Result<String, LedgerError> {
        let body = serde_json::json!({
            "address": address,
            "amount": amount.to_string(),
            "at": time::rfc3339(at),
        });
        let resp: RemoteSubmitResponse = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &self.auth())
            .send_json(body)
            .map_err(|e| LedgerError::Unavailable(e.to_string()))?
            .into_json()
            .map_err(|e| LedgerError::Unavailable(e.to_string()))?;
        Ok(resp.txn_ref)
    }

    fn confirm(&self, txn_ref: &str) -> Result<bool, LedgerError> {
        let url = format!("{}/{}", self.endpoint.trim_end_matches('/'), txn_ref);
        match self.agent.get(&url).set("Authorization", &self.auth()).call() {
            Ok(_) => Ok(true),
            Err(ureq::Error::Status(404, _)) => Ok(false),
            Err(e) => Err(LedgerError::Unavailable(e.to_string())),
        }
    }
}
