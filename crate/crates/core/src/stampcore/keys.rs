//! TSA signing keys.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::hash::Hash256;

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("malformed key: {0}")]
    Malformed(String),
    #[error("key file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignatureAlgorithm {
    Ed25519,
}

/// A TSA keypair. The key id is derived from the public key so rotated keys
/// never collide.
#[derive(Clone)]
pub struct TsaKeyPair {
    key_id: String,
    signing: SigningKey,
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    key_id: String,
    algorithm: SignatureAlgorithm,
    public_key: String,
    private_key: String,
}

impl TsaKeyPair {
    pub fn generate() -> Self {
        Self::from_signing(SigningKey::generate(&mut rand::rngs::OsRng))
    }

    pub fn from_secret(secret: &[u8]) -> Result<Self, KeyError> {
        let bytes: [u8; 32] = secret
            .try_into()
            .map_err(|_| KeyError::Malformed(format!("expected 32 secret bytes, got {}", secret.len())))?;
        Ok(Self::from_signing(SigningKey::from_bytes(&bytes)))
    }

    fn from_signing(signing: SigningKey) -> Self {
        let key_id = key_id_for(signing.verifying_key().as_bytes());
        Self { key_id, signing }
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn algorithm(&self) -> SignatureAlgorithm {
        SignatureAlgorithm::Ed25519
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn private_key(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    /// Reads the key at `path`, or creates one there if the file is absent.
    pub fn load_or_generate(path: &Path) -> Result<Self, KeyError> {
        let io_err = |source| KeyError::Io {
            path: path.display().to_string(),
            source,
        };
        if path.exists() {
            let raw = fs::read_to_string(path).map_err(io_err)?;
            let file: KeyFile =
                serde_json::from_str(&raw).map_err(|e| KeyError::Malformed(e.to_string()))?;
            let secret = B64
                .decode(file.private_key.trim())
                .map_err(|e| KeyError::Malformed(e.to_string()))?;
            let key = Self::from_secret(&secret)?;
            if B64.encode(key.public_key()) != file.public_key.trim() {
                return Err(KeyError::Malformed("public key does not match private key".into()));
            }
            return Ok(key);
        }
        let key = Self::generate();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let file = KeyFile {
            key_id: key.key_id.clone(),
            algorithm: key.algorithm(),
            public_key: B64.encode(key.public_key()),
            private_key: B64.encode(key.private_key()),
        };
        let mut out = fs::File::create(path).map_err(io_err)?;
        out.write_all(serde_json::to_string_pretty(&file).expect("key file serializes").as_bytes())
            .map_err(io_err)?;
        Ok(key)
    }
}

impl std::fmt::Debug for TsaKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TsaKeyPair").field("key_id", &self.key_id).finish_non_exhaustive()
    }
}

pub fn key_id_for(public_key: &[u8]) -> String {
    Hash256::digest(public_key).to_hex()[..16].to_string()
}

/// Signs the 32 raw bytes of a stamp hash.
pub fn sign_stamp(stamp_hash: &Hash256, key: &TsaKeyPair) -> Vec<u8> {
    key.signing.sign(stamp_hash.as_bytes()).to_bytes().to_vec()
}

/// False for any malformed key or signature as well as for a mismatch.
pub fn verify_signature(stamp_hash: &Hash256, signature: &[u8], public_key: &[u8]) -> bool {
    let Ok(pk): Result<[u8; 32], _> = public_key.try_into() else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(signature) else {
        return false;
    };
    vk.verify(stamp_hash.as_bytes(), &sig).is_ok()
}
