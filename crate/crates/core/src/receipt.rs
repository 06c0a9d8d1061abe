//! Portable evidence document for offline verification.

use serde::{Deserialize, Serialize};

use crate::anchor::{AnchorReceipt, InclusionProof};
use crate::stampcore::{verify_stamp, StampCore, VerificationReport};
use crate::store::{RecordId, StampRecord};

pub const RECEIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorEvidence {
    pub proof: InclusionProof,
    pub batch: AnchorReceipt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub version: u32,
    pub record_id: RecordId,
    pub url: String,
    pub web_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_title: Option<String>,
    pub canonical_text: String,
    pub core: StampCore,
    /// Hex Ed25519 public key of the issuing authority.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorEvidence>,
}

impl Receipt {
    pub fn new(
        record: &StampRecord,
        canonical_text: String,
        public_key: Option<[u8; 32]>,
        anchor: Option<(InclusionProof, AnchorReceipt)>,
    ) -> Self {
        Self {
            version: RECEIPT_VERSION,
            record_id: record.id,
            url: record.url.clone(),
            web_title: record.web_title.clone(),
            post_title: record.post_title.clone(),
            canonical_text,
            core: record.core.clone(),
            public_key: public_key.map(hex::encode),
            anchor: anchor.map(|(proof, batch)| AnchorEvidence { proof, batch }),
        }
    }

    /// Re-runs every check using only this document. `text` replaces the
    /// embedded canonical text when given.
    pub fn verify(&self, text: Option<&str>) -> VerificationReport {
        let key = self
            .public_key
            .as_deref()
            .and_then(|k| hex::decode(k).ok())
            .unwrap_or_default();
        verify_stamp(
            text.unwrap_or(&self.canonical_text),
            self.core.stamped_at,
            &self.core,
            &key,
            self.anchor.as_ref().map(|a| (&a.proof, &a.batch)),
        )
    }
}
