//! Stateless signed tokens and password digests.

use argon2::password_hash::{rand_core::OsRng, PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::store::UserId;
use crate::time::Instant;

pub const TOKEN_LIFETIME_SECS: i64 = 3600;
pub const MIN_PASSWORD_CHARS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Session,
    Confirm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub uid: UserId,
    /// Unix seconds.
    pub iat: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<String>,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("malformed or forged token")]
    Invalid,
    #[error("token expired")]
    Expired,
    #[error("token was issued to a different address")]
    AddressChanged,
}

#[derive(Clone)]
pub struct TokenSigner {
    secret: Vec<u8>,
}

impl TokenSigner {
    pub fn new(secret: impl AsRef<[u8]>) -> Self {
        Self { secret: secret.as_ref().to_vec() }
    }

    fn mac(&self, payload: &str) -> Hmac<Sha256> {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.secret).expect("HMAC takes any key length");
        mac.update(payload.as_bytes());
        mac
    }

    /// `base64url(json claims) "." base64url(hmac)`.
    pub fn issue(&self, uid: UserId, purpose: Purpose, ip: Option<&str>, now: Instant) -> String {
        let claims = Claims { uid, iat: now.timestamp(), ip: ip.map(str::to_string), purpose };
        let payload = B64.encode(serde_json::to_vec(&claims).expect("claims serialize"));
        let tag = B64.encode(self.mac(&payload).finalize().into_bytes());
        format!("{payload}.{tag}")
    }

    /// Accepts tokens up to and including `TOKEN_LIFETIME_SECS` after issue.
    /// Session tokens must come from the address they were issued to.
    pub fn verify(&self, token: &str, purpose: Purpose, ip: Option<&str>, now: Instant) -> Result<Claims, TokenError> {
        let (payload, tag) = token.trim().split_once('.').ok_or(TokenError::Invalid)?;
        let tag = B64.decode(tag).map_err(|_| TokenError::Invalid)?;
        self.mac(payload).verify_slice(&tag).map_err(|_| TokenError::Invalid)?;
        let raw = B64.decode(payload).map_err(|_| TokenError::Invalid)?;
        let claims: Claims = serde_json::from_slice(&raw).map_err(|_| TokenError::Invalid)?;
        if claims.purpose != purpose {
            return Err(TokenError::Invalid);
        }
        let age = now.timestamp() - claims.iat;
        if !(0..=TOKEN_LIFETIME_SECS).contains(&age) {
            return Err(TokenError::Expired);
        }
        if claims.ip.is_some() && claims.ip.as_deref() != ip {
            return Err(TokenError::AddressChanged);
        }
        Ok(claims)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("password must be at least {MIN_PASSWORD_CHARS} characters")]
pub struct WeakPassword;

pub fn check_password_policy(password: &str) -> Result<(), WeakPassword> {
    if password.chars().count() >= MIN_PASSWORD_CHARS {
        Ok(())
    } else {
        Err(WeakPassword)
    }
}

/// Salted Argon2id digest in PHC string form.
pub fn hash_password(password: &str) -> String {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .expect("argon2 with default parameters")
        .to_string()
}

pub fn verify_password(password: &str, digest: &str) -> bool {
    match PasswordHash::new(digest) {
        Ok(parsed) => Argon2::default().verify_password(password.as_bytes(), &parsed).is_ok(),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone, Utc};

    fn t0() -> Instant {
        Utc.with_ymd_and_hms(2016, 7, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn expiry_boundary() {
        let s = TokenSigner::new("secret");
        let tok = s.issue(7, Purpose::Session, Some("10.0.0.1"), t0());
        for (offset, ok) in [(0, true), (3599, true), (3600, true), (3601, false)] {
            let r = s.verify(&tok, Purpose::Session, Some("10.0.0.1"), t0() + Duration::seconds(offset));
            assert_eq!(r.is_ok(), ok, "offset {offset}");
        }
        assert_eq!(
            s.verify(&tok, Purpose::Session, Some("10.0.0.1"), t0() + Duration::seconds(3601)),
            Err(TokenError::Expired)
        );
    }

    #[test]
    fn ip_binding_and_secret() {
        let s = TokenSigner::new("secret");
        let tok = s.issue(7, Purpose::Session, Some("10.0.0.1"), t0());
        assert_eq!(s.verify(&tok, Purpose::Session, Some("10.0.0.2"), t0()), Err(TokenError::AddressChanged));
        assert_eq!(
            TokenSigner::new("other").verify(&tok, Purpose::Session, Some("10.0.0.1"), t0()),
            Err(TokenError::Invalid)
        );
        assert_eq!(s.verify(&tok, Purpose::Confirm, Some("10.0.0.1"), t0()), Err(TokenError::Invalid));
    }

    #[test]
    fn tampering_is_detected() {
        let s = TokenSigner::new("secret");
        let tok = s.issue(7, Purpose::Confirm, None, t0());
        let (payload, tag) = tok.split_once('.').unwrap();
        let forged_claims = Claims { uid: 8, iat: t0().timestamp(), ip: None, purpose: Purpose::Confirm };
        let forged = format!("{}.{tag}", B64.encode(serde_json::to_vec(&forged_claims).unwrap()));
        assert_eq!(s.verify(&forged, Purpose::Confirm, None, t0()), Err(TokenError::Invalid));
        let mut bytes = tok.clone().into_bytes();
        let last = bytes.len() - 1;
        bytes[last] = if bytes[last] == b'A' { b'B' } else { b'A' };
        assert!(s.verify(std::str::from_utf8(&bytes).unwrap(), Purpose::Confirm, None, t0()).is_err());
        assert!(s.verify(payload, Purpose::Confirm, None, t0()).is_err());
    }

    #[test]
    fn password_rules() {
        assert!(check_password_policy("abcde").is_err());
        assert!(check_password_policy("abcdef").is_ok());
        assert!(check_password_policy("ääääää").is_ok());
        let digest = hash_password("s3cret!");
        assert_ne!(digest, hash_password("s3cret!"), "salted");
        assert!(verify_password("s3cret!", &digest));
        assert!(!verify_password("s3cret?", &digest));
        assert!(!verify_password("x", "!"));
    }
}
