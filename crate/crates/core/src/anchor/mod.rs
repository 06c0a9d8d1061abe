//! Batch anchoring: pending stamp hashes are sealed into a Merkle tree whose
//! root, rendered as a Base58Check address, is submitted to a ledger with a
//! one-satoshi amount.

mod base58;
mod ledger;
mod merkle;

pub use base58::{decode_check, encode_check, to_base58_address, ADDRESS_PAYLOAD_LEN, P2PKH_VERSION};
pub use ledger::{Amount, JournalLedger, LedgerBackend, LedgerEntry, LedgerError, RemoteLedger};
pub use merkle::{build_merkle, prove_inclusion, verify_inclusion, InclusionProof, ProofStep, Side};

use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, MutexGuard, TryLockError};

use serde::{Deserialize, Serialize};

use crate::hash::Hash256;
use crate::time::{self, Instant};

#[derive(Debug, thiserror::Error)]
pub enum AnchorError {
    #[error("cannot build a Merkle tree without leaves")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid base58 character {0:?}")]
    InvalidBase58(char),
    #[error("decoded address too short ({0} bytes)")]
    AddressTooShort(usize),
    #[error("base58check checksum mismatch")]
    BadChecksum,
    #[error("another batch seal is in progress")]
    SealInProgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchStatus {
    Open,
    Sealed,
    Anchored,
}

impl fmt::Display for BatchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchStatus::Open => "open",
            BatchStatus::Sealed => "sealed",
            BatchStatus::Anchored => "anchored",
        })
    }
}

impl FromStr for BatchStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(BatchStatus::Open),
            "sealed" => Ok(BatchStatus::Sealed),
            "anchored" => Ok(BatchStatus::Anchored),
            other => Err(format!("unknown batch status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorBatch {
    pub batch_id: u64,
    pub leaves: Vec<Hash256>,
    pub merkle_root: Hash256,
    pub anchor_address: String,
    pub txn_ref: Option<String>,
    pub amount: Amount,
    #[serde(with = "time::serde_secs")]
    pub sealed_at: Instant,
    pub status: BatchStatus,
}

impl AnchorBatch {
    /// True when the stored root and address both follow from the leaves.
    pub fn is_consistent(&self) -> bool {
        match build_merkle(&self.leaves) {
            Ok(root) => root == self.merkle_root && to_base58_address(&root) == self.anchor_address,
            Err(_) => false,
        }
    }

    pub fn proof(&self, index: usize) -> Result<InclusionProof, AnchorError> {
        merkle::prove_in_batch(&self.leaves, index, self.batch_id)
    }

    pub fn receipt(&self) -> AnchorReceipt {
        AnchorReceipt {
            batch_id: self.batch_id,
            merkle_root: self.merkle_root,
            anchor_address: self.anchor_address.clone(),
            txn_ref: self.txn_ref.clone(),
            amount: self.amount,
            sealed_at: self.sealed_at,
            status: self.status,
        }
    }
}

/// What a verifier needs from a batch besides the inclusion proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorReceipt {
    pub batch_id: u64,
    pub merkle_root: Hash256,
    pub anchor_address: String,
    pub txn_ref: Option<String>,
    pub amount: Amount,
    #[serde(with = "time::serde_secs")]
    pub sealed_at: Instant,
    pub status: BatchStatus,
}

/// Seals `pending` into batch `batch_id` and submits its address. A failed
/// submit leaves the batch `Sealed` for [`retry_anchor`]. Empty input makes
/// no batch.
pub fn seal_batch(
    batch_id: u64,
    pending: &[Hash256],
    ledger: &dyn LedgerBackend,
    now: Instant,
) -> Option<(AnchorBatch, Vec<InclusionProof>)> {
    let merkle_root = build_merkle(pending).ok()?;
    let mut batch = AnchorBatch {
        batch_id,
        leaves: pending.to_vec(),
        merkle_root,
        anchor_address: to_base58_address(&merkle_root),
        txn_ref: None,
        amount: Amount::ONE_SATOSHI,
        sealed_at: time::truncate(now),
        status: BatchStatus::Sealed,
    };
    let proofs = (0..pending.len())
        .map(|i| batch.proof(i).expect("index within leaves"))
        .collect();
    retry_anchor(&mut batch, ledger, now);
    Some((batch, proofs))
}

/// Submits a `Sealed` batch's existing address. Returns whether the batch is
/// anchored afterwards.
pub fn retry_anchor(batch: &mut AnchorBatch, ledger: &dyn LedgerBackend, now: Instant) -> bool {
    if batch.status == BatchStatus::Sealed {
        match ledger.submit(&batch.anchor_address, batch.amount, now) {
            Ok(txn_ref) => {
                batch.txn_ref = Some(txn_ref);
                batch.status = BatchStatus::Anchored;
            }
            Err(err) => tracing::warn!(batch = batch.batch_id, %err, "anchor submit failed"),
        }
    }
    batch.status == BatchStatus::Anchored
}

/// Serializes sealing runs. A second concurrent seal fails fast.
#[derive(Default)]
pub struct SealLock(Mutex<()>);

impl SealLock {
    pub fn try_acquire(&self) -> Result<MutexGuard<'_, ()>, AnchorError> {
        match self.0.try_lock() {
            Ok(guard) => Ok(guard),
            Err(TryLockError::Poisoned(p)) => Ok(p.into_inner()),
            Err(TryLockError::WouldBlock) => Err(AnchorError::SealInProgress),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use std::sync::atomic::{AtomicBool, Ordering};

    struct FlakyLedger {
        fail: AtomicBool,
        inner: JournalLedger,
    }

    impl LedgerBackend for FlakyLedger {
        fn submit(&self, address: &str, amount: Amount, at: Instant) -> Result<String, LedgerError> {
            if self.fail.load(Ordering::SeqCst) {
                return Err(LedgerError::Unavailable("down".into()));
            }
            self.inner.submit(address, amount, at)
        }

        fn confirm(&self, txn_ref: &str) -> Result<bool, LedgerError> {
            self.inner.confirm(txn_ref)
        }
    }

    fn now() -> Instant {
        Utc.with_ymd_and_hms(2016, 8, 1, 23, 59, 0).unwrap()
    }

    fn leaves(n: u8) -> Vec<Hash256> {
        (0..n).map(|i| Hash256::digest(&[i])).collect()
    }

    #[test]
    fn five_pending_make_one_anchored_batch() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = JournalLedger::open(dir.path().join("l.tsv")).unwrap();
        let (batch, proofs) = seal_batch(1, &leaves(5), &ledger, now()).unwrap();
        assert_eq!(batch.status, BatchStatus::Anchored);
        assert!(batch.is_consistent());
        assert_eq!(proofs.len(), 5);
        assert!(proofs.iter().all(|p| verify_inclusion(p) && p.root == batch.merkle_root));
        let entries = ledger.entries().unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].address, batch.anchor_address);
        assert_eq!(Some(&entries[0].txn_ref), batch.txn_ref.as_ref());
        assert_eq!(entries[0].amount.to_string(), "0.00000001");
    }

    #[test]
    fn empty_pending_makes_no_batch() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = JournalLedger::open(dir.path().join("l.tsv")).unwrap();
        assert!(seal_batch(1, &[], &ledger, now()).is_none());
        assert!(ledger.entries().unwrap().is_empty());
    }

    #[test]
    fn failed_submit_stays_sealed_then_retries_without_rebuild() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = FlakyLedger {
            fail: AtomicBool::new(true),
            inner: JournalLedger::open(dir.path().join("l.tsv")).unwrap(),
        };
        let (mut batch, _) = seal_batch(3, &leaves(4), &ledger, now()).unwrap();
        assert_eq!(batch.status, BatchStatus::Sealed);
        assert!(batch.txn_ref.is_none());
        let (root, address) = (batch.merkle_root, batch.anchor_address.clone());

        ledger.fail.store(false, Ordering::SeqCst);
        assert!(retry_anchor(&mut batch, &ledger, now()));
        assert_eq!(batch.status, BatchStatus::Anchored);
        assert_eq!((batch.merkle_root, batch.anchor_address.as_str()), (root, address.as_str()));
        assert_eq!(ledger.inner.entries().unwrap().len(), 1);

        // Already anchored: no second submission.
        assert!(retry_anchor(&mut batch, &ledger, now()));
        assert_eq!(ledger.inner.entries().unwrap().len(), 1);
    }

    #[test]
    fn seal_lock_rejects_concurrent_seal() {
        let lock = SealLock::default();
        let guard = lock.try_acquire().unwrap();
        assert!(matches!(lock.try_acquire(), Err(AnchorError::SealInProgress)));
        drop(guard);
        assert!(lock.try_acquire().is_ok());
    }
}
