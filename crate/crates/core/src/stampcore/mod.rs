//! Stamp issuance and verification.
//!
//! A stamp binds a content hash (H1) to a UTC second through a derived stamp
//! hash (H2). H2 is signed by the TSA key and folded into one global chain:
//!
//! ```text
//! H1         = SHA-256(canonical_text)
//! H2         = SHA-256(hex(H1) || "YYYY-MM-DDTHH:MM:SSZ")
//! chain_hash = SHA-256(prev_chain || H2)      genesis prev_chain = 0^32
//! ```

mod keys;

pub use keys::{key_id_for, sign_stamp, verify_signature, KeyError, SignatureAlgorithm, TsaKeyPair};

use serde::{Deserialize, Serialize};

use crate::anchor::{to_base58_address, verify_inclusion, AnchorReceipt, InclusionProof};
use crate::hash::Hash256;
use crate::ingest::CanonicalDocument;
use crate::time::{self, Instant};

pub const GENESIS: Hash256 = Hash256::ZERO;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StampCore {
    pub content_hash: Hash256,
    #[serde(with = "time::serde_secs")]
    pub stamped_at: Instant,
    pub stamp_hash: Hash256,
    #[serde(default, with = "b64_opt", skip_serializing_if = "Option::is_none")]
    pub signature: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsa_key_id: Option<String>,
    pub prev_chain: Hash256,
    pub chain_hash: Hash256,
}

impl StampCore {
    /// Issues a stamp for `content_hash` at `at` (truncated to the second),
    /// signed when a key is given. The chain fields start linked to genesis;
    /// the store relinks them to the real chain head on insert.
    pub fn issue(content_hash: Hash256, at: Instant, key: Option<&TsaKeyPair>) -> Self {
        let stamped_at = time::truncate(at);
        let stamp_hash = derive_stamp_hash(&content_hash, stamped_at);
        let (signature, tsa_key_id) = match key {
            Some(key) => (Some(sign_stamp(&stamp_hash, key)), Some(key.key_id().to_string())),
            None => (None, None),
        };
        Self {
            content_hash,
            stamped_at,
            stamp_hash,
            signature,
            tsa_key_id,
            prev_chain: GENESIS,
            chain_hash: extend_chain(&GENESIS, &stamp_hash),
        }
    }

    pub fn link(&mut self, prev: Hash256) {
        self.prev_chain = prev;
        self.chain_hash = extend_chain(&prev, &self.stamp_hash);
    }
}

/// H1: covers the canonical text only, never title or URL.
pub fn hash_content(doc: &CanonicalDocument) -> Hash256 {
    hash_text(&doc.canonical_text)
}

pub fn hash_text(text: &str) -> Hash256 {
    Hash256::digest(text.as_bytes())
}

/// H2 from H1 and the stamp time.
pub fn derive_stamp_hash(content_hash: &Hash256, at: Instant) -> Hash256 {
    let material = format!("{}{}", content_hash.to_hex(), time::rfc3339(at));
    Hash256::digest(material.as_bytes())
}

pub fn extend_chain(prev: &Hash256, stamp_hash: &Hash256) -> Hash256 {
    Hash256::digest_parts(&[prev.as_bytes(), stamp_hash.as_bytes()])
}

/// Walks `cores` in insertion order from genesis and returns, per stamp,
/// whether its stored links agree with the recomputed chain.
pub fn audit_chain<'a>(cores: impl IntoIterator<Item = &'a StampCore>) -> Vec<bool> {
    let mut head = GENESIS;
    cores
        .into_iter()
        .map(|core| {
            let expected = extend_chain(&head, &core.stamp_hash);
            let ok = core.prev_chain == head && core.chain_hash == expected;
            head = expected;
            ok
        })
        .collect()
}

/// Result of an end-to-end stamp check. Checks that do not apply are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub content_hash_matches: bool,
    pub stamp_hash_matches: bool,
    pub signature_valid: Option<bool>,
    pub chain_consistent: bool,
    pub anchored: Option<bool>,
    pub overall_valid: bool,
}

impl VerificationReport {
    /// Names of the checks that failed, in report order.
    pub fn failed_checks(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.content_hash_matches {
            out.push("content_hash_matches");
        }
        if !self.stamp_hash_matches {
            out.push("stamp_hash_matches");
        }
        if self.signature_valid == Some(false) {
            out.push("signature_valid");
        }
        if !self.chain_consistent {
            out.push("chain_consistent");
        }
        if self.anchored == Some(false) {
            out.push("anchored");
        }
        out
    }
}

pub fn verify_stamp(
    text: &str,
    claimed_time: Instant,
    core: &StampCore,
    public_key: &[u8],
    anchor_evidence: Option<(&InclusionProof, &AnchorReceipt)>,
) -> VerificationReport {
    let content_hash_matches = hash_text(text) == core.content_hash;
    let stamp_hash_matches = derive_stamp_hash(&core.content_hash, claimed_time) == core.stamp_hash;
    let signature_valid = core
        .signature
        .as_deref()
        .map(|sig| verify_signature(&core.stamp_hash, sig, public_key));
    let chain_consistent = extend_chain(&core.prev_chain, &core.stamp_hash) == core.chain_hash;
    let anchored = anchor_evidence.map(|(proof, receipt)| {
        proof.leaf == core.stamp_hash
            && proof.batch_id == receipt.batch_id
            && proof.root == receipt.merkle_root
            && verify_inclusion(proof)
            && to_base58_address(&receipt.merkle_root) == receipt.anchor_address
    });
    let overall_valid = content_hash_matches
        && stamp_hash_matches
        && signature_valid.unwrap_or(true)
        && chain_consistent
        && anchored.unwrap_or(true);
    VerificationReport {
        content_hash_matches,
        stamp_hash_matches,
        signature_valid,
        chain_consistent,
        anchored,
        overall_valid,
    }
}

mod b64_opt {
    use base64::engine::general_purpose::STANDARD as B64;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_some(&B64.encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|raw| B64.decode(raw).map_err(serde::de::Error::custom))
            .transpose()
    }
}
